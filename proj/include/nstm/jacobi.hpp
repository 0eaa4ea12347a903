#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace nstm {

// Eigenvalues of a symmetric n x n row-major matrix by cyclic Jacobi
// rotations, sorted descending. Iterates until the off-diagonal Frobenius
// norm drops below 1e-10 * ||K||_F; throws NumericError after max_sweeps.
// Values in [-1e-8, 0) are clamped to 0 (PSD kernels up to rounding).
std::vector<double> symmetric_eigenvalues(std::span<const double> K, std::size_t n, int max_sweeps = 100);

}  // namespace nstm
