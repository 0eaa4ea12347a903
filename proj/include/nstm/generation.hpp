#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nstm/model.hpp"
#include "nstm/sampling.hpp"
#include "nstm/steering.hpp"
#include "nstm/vocab.hpp"

namespace nstm {

struct Condition {
  std::string name;
  SamplingConfig sampling;
  std::optional<NoiseSpec> noise;
};

struct GenerationRecord {
  std::string condition;
  int story_index = 0;
  std::uint64_t seed = 0;
  std::vector<TokenId> token_ids;
  std::string text;
  NoiseTrace noise_trace;
  int token_count = 0;
  SamplingConfig sampling;
  std::optional<NoiseSpec> noise;

  bool operator==(const GenerationRecord &) const = default;
};

// Seed list shared by every condition of an experiment, so story i is
// generated from the same seed everywhere.
std::vector<std::uint64_t> story_seeds(std::uint64_t base_seed, std::size_t n);

// Unperturbed prefill, then a decode loop with the condition's noise hook and
// sampler until the stop token (not included in the output) or
// max_new_tokens. `vocab` may be null, in which case text is the id list.
GenerationRecord generate(const Model &model, const Vocab *vocab, std::span<const TokenId> prompt,
                          const Condition &condition, std::uint64_t seed, int story_index = 0);

// Story i uses seeds[i]. Stories run in parallel on `workers` threads
// (0 = OpenMP default); output order and content do not depend on it.
std::vector<GenerationRecord> run_condition(const Model &model, const Vocab *vocab, std::span<const TokenId> prompt,
                                            const Condition &condition, std::span<const std::uint64_t> seeds,
                                            int workers = 0);

}  // namespace nstm
