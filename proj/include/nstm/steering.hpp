#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nstm/model.hpp"
#include "nstm/rng.hpp"

namespace nstm {

enum class NoiseSite { Embedding, AttentionOutput, ResidualStream, Aeni };

const char *to_string(NoiseSite site);
NoiseSite parse_noise_site(const std::string &name);

struct NoiseSpec {
  NoiseSite site = NoiseSite::ResidualStream;
  double base_sigma = 0.0;  // activation units
  // Targeted blocks; empty means every block except the first and last.
  // Ignored for the embedding site.
  std::vector<int> layers;
  int decay_horizon = 64;
  std::uint64_t seed = 0;
  // AENI only: multiply by the cosine decay (true) or use sigma * phi as is.
  bool aeni_decay = true;

  void validate(const ModelConfig &config) const;
  std::vector<int> resolved_layers(const ModelConfig &config) const;
  bool operator==(const NoiseSpec &) const = default;
};

std::vector<int> default_noise_layers(const ModelConfig &config);

// delta(t) = (1 + cos(pi * min(t, T) / T)) / 2.
double cosine_decay(int t, int horizon);

struct DecaySchedule {
  int horizon = 1;
  double operator()(int t) const { return cosine_decay(t, horizon); }
};

// n i.i.d. N(0, sigma^2) draws. sigma == 0 gives exact zeros and leaves the
// generator untouched.
Tensor gaussian_vector(CounterRng &rng, std::size_t n, double sigma);

struct NoiseTraceEntry {
  int step = 0;
  NoiseSite site = NoiseSite::ResidualStream;
  int layer = 0;
  std::optional<double> phi;
  double sigma_eff = 0.0;
  std::uint64_t draws = 0;

  bool operator==(const NoiseTraceEntry &) const = default;
};
using NoiseTrace = std::vector<NoiseTraceEntry>;

// Takes the last query row of a (1, H, S, T_k) attention-weights payload.
Tensor last_query_rows(const Tensor &weights);

// Mean over heads (and batch) of the per-head maximum attention weight, for
// a (B, H, T_k) tensor. Throws NumericError if any row does not sum to 1.
double aeni_peakedness(const Tensor &weights);

// sigma_eff = sigma_aeni * phi * delta.
double aeni_sigma(double sigma_aeni, double phi, double delta);

// Site injectors. Each returns true if it perturbed the payload; non-matching
// events (wrong site, prefill, untargeted layer) are left untouched. Only the
// last position of the (1, S, D) payload is perturbed.
bool inject_embedding(HookEvent &event, const NoiseSpec &spec, const DecaySchedule &schedule, CounterRng &rng,
                      NoiseTrace *trace = nullptr);
bool inject_attention_output(HookEvent &event, const NoiseSpec &spec, const DecaySchedule &schedule,
                             CounterRng &rng, NoiseTrace *trace = nullptr);
bool inject_residual(HookEvent &event, const NoiseSpec &spec, const DecaySchedule &schedule, CounterRng &rng,
                     NoiseTrace *trace = nullptr);
// AENI injection at AttentionOut given the peakedness measured on the same
// layer and step.
bool inject_aeni(HookEvent &event, const NoiseSpec &spec, const DecaySchedule &schedule, double phi,
                 CounterRng &rng, NoiseTrace *trace = nullptr);

// Stateful hook for one generation: owns the noise RNG (seeded from NoiseSpec::seed
// and the generation seed) and the trace. Not shareable across threads.
class NoiseInjector {
 public:
  NoiseInjector(NoiseSpec spec, const ModelConfig &config, std::uint64_t generation_seed);

  void operator()(HookEvent &event);
  // A Hook forwarding to this injector; the injector must outlive it.
  Hook hook();

  const NoiseTrace &trace() const { return trace_; }
  const NoiseSpec &spec() const { return spec_; }

 private:
  NoiseSpec spec_;
  DecaySchedule schedule_;
  CounterRng rng_;
  NoiseTrace trace_;
  std::vector<std::optional<double>> phi_;  // per layer, current step
  std::vector<int> phi_step_;
};

}  // namespace nstm
