#include "nstm/generation.hpp"

#include <omp.h>

#include <algorithm>
#include <exception>

#include "nstm/errors.hpp"

namespace nstm {

std::vector<std::uint64_t> story_seeds(std::uint64_t base_seed, std::size_t n) {
  std::vector<std::uint64_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = derive_seed(base_seed, i);
  return out;
}

GenerationRecord generate(const Model &model, const Vocab *vocab, std::span<const TokenId> prompt,
                          const Condition &cond, std::uint64_t seed, int story_index) {
  cond.sampling.validate();
  GenerationRecord rec;
  rec.condition = cond.name;
  rec.story_index = story_index;
  rec.seed = seed;
  rec.sampling = cond.sampling;
  rec.noise = cond.noise;

  std::optional<NoiseInjector> injector;
  Hooks hooks;
  if (cond.noise) {
    injector.emplace(*cond.noise, model.config(), seed);
    hooks.push_back(injector->hook());
  }

  CounterRng sampler(seed, 0x5A3B1E);
  const int budget = std::min<int>(cond.sampling.max_new_tokens,
                                   static_cast<int>(model.config().max_seq_len) - static_cast<int>(prompt.size()) + 1);
  if (budget > 0) {
    // Noise hooks never see the prompt.
    auto pre = model.forward_prefill(prompt);
    Tensor logits = std::move(pre.logits);
    for (int i = 0; i < budget; ++i) {
      const TokenId tok = sample_token(logits.span(), cond.sampling, sampler);
      if (cond.sampling.stop_token && tok == *cond.sampling.stop_token) break;
      rec.token_ids.push_back(tok);
      if (i + 1 == budget) break;
      logits = model.forward_decode(tok, pre.cache, hooks);
    }
  }
  rec.token_count = static_cast<int>(rec.token_ids.size());
  if (vocab) {
    rec.text = vocab->decode(rec.token_ids);
  } else {
    for (std::size_t i = 0; i < rec.token_ids.size(); ++i)
      rec.text += (i ? " " : "") + std::to_string(rec.token_ids[i]);
  }
  if (injector) rec.noise_trace = injector->trace();
  return rec;
}

std::vector<GenerationRecord> run_condition(const Model &model, const Vocab *vocab, std::span<const TokenId> prompt,
                                            const Condition &cond, std::span<const std::uint64_t> seeds, int workers) {
  const long n = static_cast<long>(seeds.size());
  std::vector<GenerationRecord> out(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  const int threads = workers > 0 ? workers : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (long i = 0; i < n; ++i) {
    try {
      out[i] = generate(model, vocab, prompt, cond, seeds[i], static_cast<int>(i));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto &e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace nstm
