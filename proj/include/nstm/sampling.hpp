#pragma once

#include <optional>
#include <span>
#include <vector>

#include "nstm/model.hpp"
#include "nstm/rng.hpp"

namespace nstm {

struct SamplingConfig {
  double temperature = 1.0;
  std::optional<int> top_k;
  std::optional<double> top_p;
  int max_new_tokens = 96;
  std::optional<TokenId> stop_token;

  void validate() const;
  bool operator==(const SamplingConfig &) const = default;
};

inline constexpr double kGreedyTemperature = 1e-6;

// Keeps the k largest logits (ties: lower id first); the rest become -inf.
std::vector<float> filter_top_k(std::span<const float> logits, int k);

// Keeps the shortest prefix of the probability-descending order (ties: lower
// id first) whose mass reaches p, then renormalizes.
std::vector<double> filter_top_p(std::span<const double> probs, double p);

// The distribution sample_token draws from: softmax(logits / T), then
// top-k, then top-p. Greedy configs give a one-hot at the argmax.
std::vector<double> sampling_distribution(std::span<const float> logits, const SamplingConfig &config);

// One categorical draw. Uses exactly one uniform u from the stream (none for
// greedy) and returns the first id, scanning ids in ascending order, whose
// cumulative probability exceeds u.
TokenId sample_token(std::span<const float> logits, const SamplingConfig &config, CounterRng &rng);

}  // namespace nstm
