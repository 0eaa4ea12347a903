#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "nstm/kernels.hpp"
#include "nstm/rng.hpp"

namespace k = nstm::kernels;

TEST_CASE("matvec: serial matches a naive double loop, parallel matches serial bit for bit") {
  nstm::CounterRng rng(11, 0);
  for (auto [rows, cols] : {std::pair<std::size_t, std::size_t>{1, 1}, {7, 13}, {64, 64}, {300, 257}, {1024, 96}}) {
    std::vector<float> W(rows * cols), x(cols), b(rows), ys(rows), yp(rows);
    for (auto &w : W) w = float(rng.gaussian());
    for (auto &v : x) v = float(rng.gaussian());
    for (auto &v : b) v = float(rng.gaussian());
    k::serial::matvec(W, rows, cols, x, ys, b);
    k::parallel::matvec(W, rows, cols, x, yp, b);
    CHECK(std::memcmp(ys.data(), yp.data(), rows * sizeof(float)) == 0);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0;
      for (std::size_t c = 0; c < cols; ++c) acc += double(W[r * cols + c]) * x[c];
      CHECK(ys[r] == doctest::Approx(acc + b[r]).epsilon(1e-6));
    }
  }
}

TEST_CASE("gram: symmetric, serial == parallel, matches direct dot products") {
  nstm::CounterRng rng(12, 0);
  for (auto [n, d] : {std::pair<std::size_t, std::size_t>{1, 3}, {5, 8}, {120, 512}}) {
    std::vector<double> A(n * d), Gs(n * n), Gp(n * n);
    for (auto &a : A) a = rng.gaussian();
    k::serial::gram(A, n, d, Gs);
    k::parallel::gram(A, n, d, Gp);
    CHECK(std::memcmp(Gs.data(), Gp.data(), n * n * sizeof(double)) == 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(Gs[i * n + j] == Gs[j * n + i]);
        double acc = 0;
        for (std::size_t t = 0; t < d; ++t) acc += A[i * d + t] * A[j * d + t];
        CHECK(Gs[i * n + j] == doctest::Approx(acc).epsilon(1e-12));
      }
  }
}

TEST_CASE("dot accumulates in double") {
  std::vector<float> a{1e8f, 1.0f, -1e8f}, b{1.0f, 1.0f, 1.0f};
  CHECK(k::dot(a, b) == 1.0);
}
