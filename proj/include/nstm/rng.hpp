#pragma once

#include <cstdint>

namespace nstm {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Combines two seeds into an independent stream key.
constexpr std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ mix64(b + 0x632BE59BD9B4E019ull));
}

// Counter-based generator: the i-th 64-bit output is mix64(key + (i+1)*phi).
// Uniforms take the top 53 bits. Gaussians use Box-Muller on consecutive
// uniform pairs (u1, u2): r = sqrt(-2 ln(1 - u1)), z0 = r cos(2 pi u2),
// z1 = r sin(2 pi u2), returned in that order.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed = 0, std::uint64_t stream = 0) : key_(derive_seed(seed, stream)) {}

  std::uint64_t next_u64() {
    ++counter_;
    return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ull);
  }
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double gaussian();

  std::uint64_t counter() const { return counter_; }
  std::uint64_t gaussian_draws() const { return gaussian_draws_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::uint64_t gaussian_draws_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace nstm
