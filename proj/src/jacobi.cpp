#include "nstm/jacobi.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "nstm/errors.hpp"

namespace nstm {

std::vector<double> symmetric_eigenvalues(std::span<const double> K, std::size_t n, int max_sweeps) {
  if (K.size() != n * n) throw NumericError("eigenvalues: matrix is not n x n");
  std::vector<double> a(K.begin(), K.end());
  double fro2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(a[i * n + j])) throw NumericError("eigenvalues: non-finite matrix entry");
      if (a[i * n + j] != a[j * n + i]) throw NumericError("eigenvalues: matrix is not symmetric");
      fro2 += a[i * n + j] * a[i * n + j];
    }
  }
  const double tol = 1e-10 * std::sqrt(fro2);
  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a[i * n + j] * a[i * n + j];
    return std::sqrt(s);
  };

  int sweep = 0;
  while (off_norm() > tol) {
    if (++sweep > max_sweeps)
      throw NumericError("Jacobi eigenvalue solver did not converge in " + std::to_string(max_sweeps) + " sweeps");
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double app = a[p * n + p], aqq = a[q * n + q];
        // Rotation angle annihilating a[p][q] (Rutishauser's stable form).
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = a[p * n + k] = c * akp - s * akq;
          a[k * n + q] = a[q * n + k] = s * akp + c * akq;
        }
        a[p * n + p] = app - t * apq;
        a[q * n + q] = aqq + t * apq;
        a[p * n + q] = a[q * n + p] = 0.0;
      }
    }
  }

  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v = a[i * n + i];
    if (v < 0.0 && v >= -1e-8) v = 0.0;
    ev[i] = v;
  }
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return ev;
}

}  // namespace nstm
