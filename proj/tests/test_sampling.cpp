#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "nstm/errors.hpp"
#include "nstm/sampling.hpp"

using namespace nstm;

namespace {
constexpr float kNegInf = -std::numeric_limits<float>::infinity();
}

TEST_CASE("top-k") {
  std::vector<float> l{3, 2, 1};
  CHECK(filter_top_k(l, 3) == l);
  CHECK(filter_top_k(l, 10) == l);
  CHECK(filter_top_k(l, 1) == std::vector<float>{3, kNegInf, kNegInf});
  std::vector<float> tie{1, 1, 0};
  CHECK(filter_top_k(tie, 1) == std::vector<float>{1, kNegInf, kNegInf});
  std::vector<float> tie2{0, 2, 2, 2};
  CHECK(filter_top_k(tie2, 2) == std::vector<float>{kNegInf, 2, 2, kNegInf});
  CHECK_THROWS_AS(filter_top_k(l, 0), DataError);
}

TEST_CASE("top-p") {
  std::vector<double> p{0.5, 0.3, 0.2};
  CHECK(filter_top_p(p, 1.0) == p);
  auto kept = filter_top_p(p, 0.7);
  CHECK(kept[0] == doctest::Approx(0.625));
  CHECK(kept[1] == doctest::Approx(0.375));
  CHECK(kept[2] == 0.0);
  auto first = filter_top_p(std::vector<double>{0.9, 0.1}, 0.5);
  CHECK(first == std::vector<double>{1.0, 0.0});
  // Ties in the descending order go to the lower id.
  auto tie = filter_top_p(std::vector<double>{0.25, 0.5, 0.25}, 0.6);
  CHECK(tie == std::vector<double>{1.0 / 3, 2.0 / 3, 0.0});
}

TEST_CASE("greedy and one-hot-dominant logits") {
  std::vector<float> l{0.1f, 5.0f, 5.0f, -2.0f};
  SamplingConfig greedy;
  greedy.temperature = 1e-7;
  CounterRng rng(1, 0);
  CHECK(sample_token(l, greedy, rng) == 1);
  CHECK(rng.counter() == 0);

  std::vector<float> dominant{0.0f, 80.0f, 0.0f, 0.0f};
  SamplingConfig hot;
  hot.temperature = 1.8;
  hot.top_k = 3;
  for (int i = 0; i < 200; ++i) CHECK(sample_token(dominant, hot, rng) == 1);
}

TEST_CASE("one uniform per draw, inverse CDF over ascending ids") {
  std::vector<float> flat(4, 0.0f);
  SamplingConfig cfg;
  CounterRng rng(31, 7), twin(31, 7);
  for (int i = 0; i < 1000; ++i) {
    const double u = twin.uniform();
    const TokenId expected = u < 0.25 ? 0 : u < 0.5 ? 1 : u < 0.75 ? 2 : 3;
    CHECK(sample_token(flat, cfg, rng) == expected);
  }
  CHECK(rng.counter() == twin.counter());
}

TEST_CASE("T = 1.8 with top-k 40 applies temperature then top-k") {
  std::vector<float> l(100);
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = std::sin(0.37f * i) * 3.0f;
  SamplingConfig cfg;
  cfg.temperature = 1.8;
  cfg.top_k = 40;
  cfg.validate();
  auto p = sampling_distribution(l, cfg);
  auto order = filter_top_k(l, 40);
  double z = 0;
  for (float x : order)
    if (!std::isinf(x)) z += std::exp(x / 1.8);
  int nonzero = 0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    if (std::isinf(order[i])) {
      CHECK(p[i] == 0.0);
    } else {
      ++nonzero;
      CHECK(p[i] == doctest::Approx(std::exp(l[i] / 1.8) / z).epsilon(1e-12));
    }
  }
  CHECK(nonzero == 40);

  SamplingConfig nucleus;
  nucleus.temperature = 1.8;
  nucleus.top_p = 0.9;
  auto q = sampling_distribution(l, nucleus);
  double mass = 0;
  for (double x : q) mass += x;
  CHECK(mass == doctest::Approx(1.0));
}

TEST_CASE("sample frequencies match the filtered distribution within 3 standard errors") {
  const int draws = 100000;
  std::vector<float> l{1.2f, -0.3f, 0.8f, 2.0f, 0.0f, -1.5f, 0.4f, 1.9f, -0.7f, 0.1f, 0.6f, -2.2f, 1.1f, 0.2f, -0.1f, 0.9f};
  std::vector<SamplingConfig> configs(4);
  configs[1].temperature = 1.8;
  configs[1].top_k = 5;
  configs[2].temperature = 0.7;
  configs[2].top_p = 0.8;
  configs[3].temperature = 1.3;
  configs[3].top_k = 10;
  configs[3].top_p = 0.9;
  std::uint64_t seed = 100;
  for (const auto &cfg : configs) {
    auto p = sampling_distribution(l, cfg);
    std::vector<int> counts(l.size(), 0);
    CounterRng rng(seed++, 0);
    for (int i = 0; i < draws; ++i) ++counts[sample_token(l, cfg, rng)];
    for (std::size_t t = 0; t < l.size(); ++t) {
      const double freq = double(counts[t]) / draws;
      const double se = std::sqrt(p[t] * (1 - p[t]) / draws);
      if (p[t] == 0.0)
        CHECK(counts[t] == 0);
      else
        CHECK_MESSAGE(std::abs(freq - p[t]) <= 3 * se, "token " << t << " freq " << freq << " p " << p[t]);
    }
  }
}

TEST_CASE("config validation") {
  SamplingConfig c;
  c.temperature = 0.0;
  CHECK_THROWS_AS(c.validate(), DataError);
  c = {};
  c.top_k = 0;
  CHECK_THROWS_AS(c.validate(), DataError);
  c = {};
  c.top_p = 1.5;
  CHECK_THROWS_AS(c.validate(), DataError);
  c = {};
  c.top_p = 0.0;
  CHECK_THROWS_AS(c.validate(), DataError);
  c = {};
  c.max_new_tokens = -1;
  CHECK_THROWS_AS(c.validate(), DataError);
}
