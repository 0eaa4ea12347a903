#pragma once

// Dense inner loops shared by the model and the metrics. Each kernel has a
// serial reference in `serial::` and an OpenMP version in `parallel::`; the
// two produce bit-identical results because every output element is reduced
// in the same fixed order by exactly one thread.

#include <cstddef>
#include <span>

namespace nstm::kernels {

namespace serial {

// y[r] = sum_c W[r, c] * x[c] (+ bias[r]); W is rows x cols row-major.
void matvec(std::span<const float> W, std::size_t rows, std::size_t cols,
            std::span<const float> x, std::span<float> y,
            std::span<const float> bias = {});

// G = A * A^T for A (n x d) row-major, accumulated in double.
void gram(std::span<const double> A, std::size_t n, std::size_t d, std::span<double> G);

}  // namespace serial

namespace parallel {

void matvec(std::span<const float> W, std::size_t rows, std::size_t cols,
            std::span<const float> x, std::span<float> y,
            std::span<const float> bias = {});

void gram(std::span<const double> A, std::size_t n, std::size_t d, std::span<double> G);

}  // namespace parallel

// Below this many multiply-adds the OpenMP kernels stay on one thread.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

double dot(std::span<const float> a, std::span<const float> b);

}  // namespace nstm::kernels
