#include "nstm/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "nstm/errors.hpp"

namespace nstm {

void SamplingConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw DataError("temperature must be > 0");
  if (top_k && *top_k < 1) throw DataError("top_k must be >= 1");
  if (top_p && !(*top_p > 0.0 && *top_p <= 1.0)) throw DataError("top_p must be in (0, 1]");
  if (max_new_tokens < 0) throw DataError("max_new_tokens must be >= 0");
}

namespace {

template <class T>
std::vector<std::size_t> descending_order(std::span<const T> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  return idx;
}

std::size_t argmax(std::span<const float> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

std::vector<float> filter_top_k(std::span<const float> logits, int k) {
  std::vector<float> out(logits.begin(), logits.end());
  if (k < 1) throw DataError("top_k must be >= 1");
  if (static_cast<std::size_t>(k) >= logits.size()) return out;
  const auto order = descending_order(logits);
  for (std::size_t i = static_cast<std::size_t>(k); i < order.size(); ++i)
    out[order[i]] = -std::numeric_limits<float>::infinity();
  return out;
}

std::vector<double> filter_top_p(std::span<const double> probs, double p) {
  std::vector<double> out(probs.begin(), probs.end());
  if (p >= 1.0) return out;
  const auto order = descending_order(probs);
  double cum = 0.0;
  std::size_t keep = 0;
  while (keep < order.size() && cum < p) cum += probs[order[keep++]];
  for (std::size_t i = keep; i < order.size(); ++i) out[order[i]] = 0.0;
  for (double &x : out) x /= cum;
  return out;
}

std::vector<double> sampling_distribution(std::span<const float> logits, const SamplingConfig &cfg) {
  std::vector<double> probs(logits.size(), 0.0);
  if (cfg.temperature <= kGreedyTemperature) {
    probs[argmax(logits)] = 1.0;
    return probs;
  }
  std::vector<float> l = cfg.top_k ? filter_top_k(logits, *cfg.top_k) : std::vector<float>(logits.begin(), logits.end());
  const double mx = *std::max_element(l.begin(), l.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    probs[i] = std::isinf(l[i]) ? 0.0 : std::exp((l[i] - mx) / cfg.temperature);
    sum += probs[i];
  }
  for (double &x : probs) x /= sum;
  if (cfg.top_p) probs = filter_top_p(probs, *cfg.top_p);
  return probs;
}

TokenId sample_token(std::span<const float> logits, const SamplingConfig &cfg, CounterRng &rng) {
  if (cfg.temperature <= kGreedyTemperature) return static_cast<TokenId>(argmax(logits));
  const auto probs = sampling_distribution(logits, cfg);
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last = i;
    cum += probs[i];
    if (u < cum) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(last);
}

}  // namespace nstm
