#include "nstm/calibration.hpp"

#include <algorithm>
#include <cmath>

#include "nstm/errors.hpp"
#include "nstm/steering.hpp"

namespace nstm {

double block_output_statistic(const Tensor &t, bool elementwise) {
  if (t.rank() != 3 || t.numel() == 0) throw DataError("block output must be (B, S, D), got " + t.shape_string());
  const std::size_t B = t.dims[0], S = t.dims[1], D = t.dims[2];
  double acc = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    auto row = t.row(b * S + (S - 1));
    for (float x : row) acc += elementwise ? static_cast<double>(x) * x : static_cast<double>(x);
  }
  return acc / static_cast<double>(B * D);
}

double layer_rms(std::span<const Tensor> outputs, bool elementwise) {
  if (outputs.empty()) throw DataError("calibration: no decode steps collected");
  double acc = 0.0;
  for (const auto &t : outputs) {
    const double x = block_output_statistic(t, elementwise);
    acc += elementwise ? x : x * x;
  }
  return std::sqrt(acc / static_cast<double>(outputs.size()));
}

double median(std::vector<double> v) {
  if (v.empty()) throw DataError("median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

TokenId argmax(const Tensor &logits) {
  return static_cast<TokenId>(std::max_element(logits.data.begin(), logits.data.end()) - logits.data.begin());
}

}  // namespace

CalibrationReport calibrate(const Model &model, const std::vector<std::vector<TokenId>> &prompts,
                            const CalibrationOptions &opt) {
  const auto &cfg = model.config();
  if (!(opt.alpha > 0.0) || !std::isfinite(opt.alpha)) throw DataError("calibration: alpha must be > 0");
  if (prompts.empty()) throw DataError("calibration: no prompts");
  if (opt.steps_per_prompt < 1) throw DataError("calibration: steps_per_prompt must be >= 1");
  const std::vector<int> layers = default_noise_layers(cfg);
  if (layers.empty())
    throw DataError("calibration: model with " + std::to_string(cfg.n_layers) + " layers has no eligible blocks");

  // Per-prompt accumulators of x^2, merged in prompt order afterwards.
  const long P = static_cast<long>(prompts.size());
  std::vector<std::vector<double>> sums(prompts.size(), std::vector<double>(cfg.n_layers, 0.0));
  std::vector<int> steps(prompts.size(), 0);

#pragma omp parallel for schedule(dynamic, 1)
  for (long p = 0; p < P; ++p) {
    auto &acc = sums[p];
    Hooks hooks{[&](HookEvent &ev) {
      if (ev.site != HookSite::BlockOut || ev.phase != Phase::Decode) return;
      if (ev.layer < 1 || ev.layer + 1 >= static_cast<int>(cfg.n_layers)) return;
      const double x = block_output_statistic(ev.payload, opt.elementwise_rms);
      acc[ev.layer] += opt.elementwise_rms ? x : x * x;
    }};
    auto pre = model.forward_prefill(prompts[p]);
    TokenId tok = argmax(pre.logits);
    const int budget = std::min<int>(opt.steps_per_prompt,
                                     static_cast<int>(cfg.max_seq_len) - static_cast<int>(prompts[p].size()));
    for (int s = 0; s < budget; ++s) {
      tok = argmax(model.forward_decode(tok, pre.cache, hooks));
      ++steps[p];
    }
  }

  CalibrationReport r;
  r.alpha = opt.alpha;
  r.prompt_set_id = opt.prompt_set_id;
  r.elementwise_rms = opt.elementwise_rms;
  for (int s : steps) r.decode_steps_collected += s;
  if (r.decode_steps_collected < 1) throw DataError("calibration: no decode steps collected");
  std::vector<double> rms;
  for (int l : layers) {
    double total = 0.0;
    for (const auto &acc : sums) total += acc[l];
    const double v = std::sqrt(total / r.decode_steps_collected);
    r.per_layer_rms[l] = v;
    rms.push_back(v);
  }
  r.median_rms = median(rms);
  r.sigma_res = opt.alpha * r.median_rms;
  r.sigma_emb = r.sigma_attn = r.sigma_aeni = r.sigma_res;
  return r;
}

}  // namespace nstm
