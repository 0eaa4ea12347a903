#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "nstm/calibration.hpp"
#include "nstm/errors.hpp"
#include "nstm/synth.hpp"
#include "support.hpp"

using namespace nstm;

TEST_CASE("layer_rms on hand-checkable inputs") {
  std::vector<Tensor> constant(5, Tensor({1, 1, 6}, 3.0f));
  CHECK(layer_rms(constant) == doctest::Approx(3.0).epsilon(1e-15));
  std::vector<Tensor> alt{Tensor({1, 1, 4}, 2.0f), Tensor({1, 1, 4}, -2.0f)};
  CHECK(layer_rms(alt) == doctest::Approx(2.0).epsilon(1e-15));
  // mean-then-square: a zero-mean output contributes nothing
  std::vector<Tensor> zero_mean{Tensor({1, 1, 2}, std::vector<float>{1.0f, -1.0f})};
  CHECK(layer_rms(zero_mean) == 0.0);
  CHECK(layer_rms(zero_mean, true) == doctest::Approx(1.0));
  CHECK_THROWS_AS(layer_rms(std::vector<Tensor>{}), DataError);
}

TEST_CASE("median") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);
  CHECK(median({7.0}) == 7.0);
  CHECK_THROWS_AS(median({}), DataError);
  // One wild layer moves the median only as the order statistic says.
  std::vector<double> v{1.0, 2.0, 3.0, 4.0, 5.0};
  auto w = v;
  w[4] *= 1000.0;
  CHECK(median(w) == median(v));
  w = v;
  w[0] *= 1000.0;  // 1000 becomes the largest; middle is now 4
  CHECK(median(w) == 4.0);
}

TEST_CASE("calibrate equals a streaming recomputation over logged activations") {
  auto m = testing::small_model(7, 5);
  std::vector<std::vector<TokenId>> prompts{{1, 2, 3}};
  CalibrationOptions opt;
  opt.steps_per_prompt = 32;
  opt.prompt_set_id = "toy";
  auto report = calibrate(m, prompts, opt);

  // Greedy decode by hand, logging decode-time block outputs.
  std::map<int, long double> acc;
  int steps = 0;
  Hook log = [&](HookEvent &e) {
    if (e.site != HookSite::BlockOut || e.phase != Phase::Decode) return;
    long double mean = 0;
    for (float x : e.payload.data) mean += x;
    mean /= e.payload.numel();
    acc[e.layer] += mean * mean;
  };
  auto pre = m.forward_prefill(prompts[0]);
  auto argmax = [](const Tensor &t) {
    return static_cast<TokenId>(std::max_element(t.data.begin(), t.data.end()) - t.data.begin());
  };
  TokenId tok = argmax(pre.logits);
  for (int s = 0; s < 32; ++s, ++steps) tok = argmax(m.forward_decode(tok, pre.cache, {log}));

  CHECK(report.decode_steps_collected == 32);
  REQUIRE(report.per_layer_rms.size() == 3);  // layers 1..3 of 5
  std::vector<double> rms;
  for (int l = 1; l <= 3; ++l) {
    double want = static_cast<double>(std::sqrt(acc[l] / steps));
    CHECK(report.per_layer_rms.at(l) == doctest::Approx(want).epsilon(1e-6));
    rms.push_back(want);
  }
  CHECK(report.per_layer_rms.count(0) == 0);
  CHECK(report.per_layer_rms.count(4) == 0);
  std::sort(rms.begin(), rms.end());
  CHECK(report.median_rms == doctest::Approx(rms[1]).epsilon(1e-6));
  CHECK(report.alpha == 0.175);
  CHECK(report.sigma_res == 0.175 * report.median_rms);
  CHECK(report.sigma_emb == report.sigma_res);
  CHECK(report.sigma_attn == report.sigma_res);
  CHECK(report.sigma_aeni == report.sigma_res);
  CHECK(report.prompt_set_id == "toy");
}

TEST_CASE("calibration is deterministic and scale-equivariant") {
  auto m = make_synthetic_model(fixture_synth_options(1));
  std::vector<std::vector<TokenId>> prompts{{5, 9, 14}, {100, 3}, {42, 42, 42, 7}};
  CalibrationOptions opt;
  opt.steps_per_prompt = 8;
  auto a = calibrate(m, prompts, opt);
  auto b = calibrate(m, prompts, opt);
  CHECK(a == b);
  for (float c : {0.5f, 2.0f, 10.0f}) {
    auto s = calibrate(m.scaled_residual(c), prompts, opt);
    CHECK(s.decode_steps_collected == a.decode_steps_collected);
    for (const auto &[l, v] : a.per_layer_rms) CHECK(testing::rel_err(s.per_layer_rms.at(l), c * v) <= 1e-5);
    CHECK(testing::rel_err(s.median_rms, c * a.median_rms) <= 1e-5);
    CHECK(testing::rel_err(s.sigma_res, c * a.sigma_res) <= 1e-5);
  }
}

TEST_CASE("calibration rejects unusable inputs") {
  auto two = testing::small_model(1, 2);
  CHECK_THROWS_AS(calibrate(two, {{1, 2}}, {}), DataError);
  auto m = testing::small_model(1, 3);
  CHECK_THROWS_AS(calibrate(m, {}, {}), DataError);
  CalibrationOptions bad;
  bad.alpha = 0.0;
  CHECK_THROWS_AS(calibrate(m, {{1}}, bad), DataError);
  bad = {};
  bad.steps_per_prompt = 0;
  CHECK_THROWS_AS(calibrate(m, {{1}}, bad), DataError);
}

TEST_CASE("elementwise mode squares before averaging") {
  auto m = testing::small_model(3, 3);
  CalibrationOptions opt;
  opt.steps_per_prompt = 4;
  opt.elementwise_rms = true;
  auto r = calibrate(m, {{1, 2}}, opt);
  CHECK(r.elementwise_rms);
  opt.elementwise_rms = false;
  auto q = calibrate(m, {{1, 2}}, opt);
  // RMS of elements bounds |mean| from above.
  CHECK(r.median_rms >= q.median_rms);
}
