#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace nstm {

// Dense row-major float tensor. The only numeric carrier for weights and
// activations; rank is small (<= 4) everywhere in this codebase.
struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> d, float fill = 0.0f)
      : dims(std::move(d)), data(numel_of(dims), fill) {}
  Tensor(std::vector<std::size_t> d, std::vector<float> values);

  static std::size_t numel_of(const std::vector<std::size_t> &d) {
    return std::accumulate(d.begin(), d.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return dims.size(); }

  std::span<float> span() { return data; }
  std::span<const float> span() const { return data; }

  // Row `i` of a tensor viewed as (numel / last_dim, last_dim).
  std::span<float> row(std::size_t i);
  std::span<const float> row(std::size_t i) const;

  bool all_finite() const;
  std::string shape_string() const;

  bool operator==(const Tensor &) const = default;
};

}  // namespace nstm
