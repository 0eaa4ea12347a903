#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nstm/model.hpp"
#include "nstm/rng.hpp"
#include "nstm/synth.hpp"

namespace testing {

// Small random model with weights large enough that every block matters.
inline nstm::Model small_model(std::uint64_t seed = 3, std::uint32_t layers = 3, std::uint32_t heads = 2,
                               std::uint32_t d = 16, std::uint32_t vocab = 24, std::uint32_t ctx = 48) {
  nstm::SynthOptions o;
  o.config.n_layers = layers;
  o.config.n_heads = heads;
  o.config.d_model = d;
  o.config.d_ff = 2 * d;
  o.config.vocab_size = vocab;
  o.config.max_seq_len = ctx;
  o.seed = seed;
  o.init_std = 0.3f;
  auto m = nstm::make_synthetic_model(o);
  // Nonzero gains and biases so those paths are exercised too.
  auto w = m.weights();
  nstm::CounterRng rng(seed, 99);
  for (auto &b : w.blocks) {
    for (float &g : b.attn_norm.data) g = static_cast<float>(1.0 + 0.2 * rng.gaussian());
    for (float &g : b.mlp_norm.data) g = static_cast<float>(1.0 + 0.2 * rng.gaussian());
    for (float &x : b.b_up.data) x = static_cast<float>(0.1 * rng.gaussian());
    for (float &x : b.b_down.data) x = static_cast<float>(0.1 * rng.gaussian());
  }
  for (float &g : w.final_norm.data) g = static_cast<float>(1.0 + 0.2 * rng.gaussian());
  return nstm::Model(m.config(), std::move(w));
}

inline double max_abs_diff(const std::vector<float> &a, const std::vector<float> &b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return a.size() == b.size() ? m : INFINITY;
}

inline double rel_err(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-300); }

}  // namespace testing
