// Serial vs OpenMP timing for the two hot kernels. Also checks the outputs
// agree bit for bit, since the parallel versions promise that.
#include <cstdio>
#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include <omp.h>

#include "nstm/kernels.hpp"
#include "nstm/rng.hpp"

namespace k = nstm::kernels;

template <class F>
double best_of(int reps, F &&f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    double t0 = omp_get_wtime();
    f();
    best = std::min(best, omp_get_wtime() - t0);
  }
  return best;
}

int main(int argc, char **argv) {
  int reps = argc > 1 ? std::atoi(argv[1]) : 5;
  nstm::CounterRng rng(42, 0);
  bool ok = true;

  std::printf("threads available: %d\n", omp_get_max_threads());
  std::printf("%-8s %12s %12s %12s %8s %s\n", "kernel", "shape", "serial ms", "omp ms", "speedup", "identical");

  for (std::size_t n : {256u, 1024u, 4096u}) {
    std::vector<float> W(n * n), x(n), y1(n), y2(n);
    for (auto &w : W) w = static_cast<float>(rng.gaussian());
    for (auto &v : x) v = static_cast<float>(rng.gaussian());
    double ts = best_of(reps, [&] { k::serial::matvec(W, n, n, x, y1); });
    double tp = best_of(reps, [&] { k::parallel::matvec(W, n, n, x, y2); });
    bool same = std::memcmp(y1.data(), y2.data(), n * sizeof(float)) == 0;
    ok = ok && same;
    std::printf("%-8s %12s %12.3f %12.3f %8.2f %s\n", "matvec", (std::to_string(n) + "^2").c_str(), ts * 1e3,
                tp * 1e3, ts / tp, same ? "yes" : "NO");
  }

  for (std::size_t n : {50u, 200u, 500u}) {
    const std::size_t d = 512;
    std::vector<double> A(n * d), G1(n * n), G2(n * n);
    for (auto &a : A) a = rng.uniform();
    double ts = best_of(reps, [&] { k::serial::gram(A, n, d, G1); });
    double tp = best_of(reps, [&] { k::parallel::gram(A, n, d, G2); });
    bool same = std::memcmp(G1.data(), G2.data(), n * n * sizeof(double)) == 0;
    ok = ok && same;
    std::printf("%-8s %12s %12.3f %12.3f %8.2f %s\n", "gram", (std::to_string(n) + "x512").c_str(), ts * 1e3,
                tp * 1e3, ts / tp, same ? "yes" : "NO");
  }
  return ok ? 0 : 1;
}
