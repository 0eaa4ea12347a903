#include "nstm/kernels.hpp"
#include "nstm/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace nstm {

Tensor::Tensor(std::vector<std::size_t> d, std::vector<float> values)
    : dims(std::move(d)), data(std::move(values)) {
  if (numel_of(dims) != data.size())
    throw std::invalid_argument("tensor: dims " + shape_string() + " do not match " +
                                std::to_string(data.size()) + " values");
}

std::span<float> Tensor::row(std::size_t i) {
  const std::size_t w = dims.empty() ? 1 : dims.back();
  return std::span<float>(data).subspan(i * w, w);
}

std::span<const float> Tensor::row(std::size_t i) const {
  const std::size_t w = dims.empty() ? 1 : dims.back();
  return std::span<const float>(data).subspan(i * w, w);
}

bool Tensor::all_finite() const {
  for (float v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_string() const {
  std::string s = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + ")";
}

namespace kernels {

namespace {

inline float row_dot(const float *w, const float *x, std::size_t cols) {
  double acc = 0.0;
  for (std::size_t c = 0; c < cols; ++c) acc += static_cast<double>(w[c]) * x[c];
  return static_cast<float>(acc);
}

inline double row_dot(const double *a, const double *b, std::size_t d) {
  double acc = 0.0;
  for (std::size_t k = 0; k < d; ++k) acc += a[k] * b[k];
  return acc;
}

}  // namespace

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

namespace serial {

void matvec(std::span<const float> W, std::size_t rows, std::size_t cols,
            std::span<const float> x, std::span<float> y, std::span<const float> bias) {
  for (std::size_t r = 0; r < rows; ++r) {
    float v = row_dot(W.data() + r * cols, x.data(), cols);
    y[r] = bias.empty() ? v : v + bias[r];
  }
}

void gram(std::span<const double> A, std::size_t n, std::size_t d, std::span<double> G) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double v = row_dot(A.data() + i * d, A.data() + j * d, d);
      G[i * n + j] = v;
      G[j * n + i] = v;
    }
  }
}

}  // namespace serial

namespace parallel {

void matvec(std::span<const float> W, std::size_t rows, std::size_t cols,
            std::span<const float> x, std::span<float> y, std::span<const float> bias) {
  const bool big = rows * cols >= kParallelThreshold;
  const long n = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (big)
  for (long r = 0; r < n; ++r) {
    float v = row_dot(W.data() + r * cols, x.data(), cols);
    y[r] = bias.empty() ? v : v + bias[r];
  }
}

void gram(std::span<const double> A, std::size_t n, std::size_t d, std::span<double> G) {
  const bool big = n * n * d >= kParallelThreshold;
  const long nn = static_cast<long>(n);
  // Each (i, j >= i) cell is written by the thread owning row i only.
#pragma omp parallel for schedule(dynamic, 4) if (big)
  for (long i = 0; i < nn; ++i) {
    for (std::size_t j = static_cast<std::size_t>(i); j < n; ++j) {
      double v = row_dot(A.data() + i * d, A.data() + j * d, d);
      G[i * n + j] = v;
      G[j * n + i] = v;
    }
  }
}

}  // namespace parallel

}  // namespace kernels
}  // namespace nstm
