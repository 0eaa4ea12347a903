#include "nstm/steering.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nstm/errors.hpp"

namespace nstm {

const char *to_string(NoiseSite site) {
  switch (site) {
    case NoiseSite::Embedding: return "embedding";
    case NoiseSite::AttentionOutput: return "attention";
    case NoiseSite::ResidualStream: return "residual";
    case NoiseSite::Aeni: return "aeni";
  }
  return "?";
}

NoiseSite parse_noise_site(const std::string &name) {
  if (name == "embedding") return NoiseSite::Embedding;
  if (name == "attention") return NoiseSite::AttentionOutput;
  if (name == "residual") return NoiseSite::ResidualStream;
  if (name == "aeni") return NoiseSite::Aeni;
  throw DataError("unknown noise site '" + name + "' (expected embedding|attention|residual|aeni)");
}

std::vector<int> default_noise_layers(const ModelConfig &config) {
  std::vector<int> out;
  for (int l = 1; l + 1 < static_cast<int>(config.n_layers); ++l) out.push_back(l);
  return out;
}

std::vector<int> NoiseSpec::resolved_layers(const ModelConfig &config) const {
  if (site == NoiseSite::Embedding) return {-1};
  if (layers.empty()) return default_noise_layers(config);
  std::vector<int> out = layers;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void NoiseSpec::validate(const ModelConfig &config) const {
  if (!std::isfinite(base_sigma) || base_sigma < 0.0) throw DataError("noise sigma must be finite and >= 0");
  if (decay_horizon < 1) throw DataError("noise decay horizon must be >= 1");
  if (site != NoiseSite::Embedding)
    for (int l : layers)
      if (l < 0 || l >= static_cast<int>(config.n_layers))
        throw DataError("noise layer " + std::to_string(l) + " outside [0, " + std::to_string(config.n_layers) + ")");
}

double cosine_decay(int t, int horizon) {
  if (horizon < 1) throw DataError("decay horizon must be >= 1, got " + std::to_string(horizon));
  if (t < 0) t = 0;
  const int clamped = std::min(t, horizon);
  if (clamped == horizon) return 0.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * clamped / horizon));
}

Tensor gaussian_vector(CounterRng &rng, std::size_t n, double sigma) {
  Tensor out({n}, 0.0f);
  if (sigma == 0.0) return out;
  for (float &x : out.data) x = static_cast<float>(sigma * rng.gaussian());
  return out;
}

Tensor last_query_rows(const Tensor &w) {
  if (w.rank() != 4) throw NumericError("attention weights must be (B, H, S, T_k), got " + w.shape_string());
  const std::size_t B = w.dims[0], H = w.dims[1], S = w.dims[2], Tk = w.dims[3];
  Tensor out({B, H, Tk});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h) {
      auto src = w.row((b * H + h) * S + (S - 1));
      std::copy(src.begin(), src.end(), out.row(b * H + h).begin());
    }
  return out;
}

double aeni_peakedness(const Tensor &w) {
  if (w.rank() != 3 || w.numel() == 0) throw NumericError("peakedness expects (B, H, T_k) weights, got " + w.shape_string());
  const std::size_t rows = w.dims[0] * w.dims[1];
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = w.row(r);
    double sum = 0.0;
    float mx = row[0];
    for (float x : row) {
      sum += x;
      mx = std::max(mx, x);
    }
    if (std::abs(sum - 1.0) > 1e-5)
      throw NumericError("attention row sums to " + std::to_string(sum) + ", softmax is broken");
    total += mx;
  }
  return total / static_cast<double>(rows);
}

double aeni_sigma(double sigma_aeni, double phi, double delta) { return sigma_aeni * phi * delta; }

namespace {

bool targets(const NoiseSpec &spec, int layer) {
  if (spec.layers.empty()) return false;  // callers resolve defaults first
  return std::find(spec.layers.begin(), spec.layers.end(), layer) != spec.layers.end();
}

// Adds N(0, sigma^2 I) to the last position of a (1, S, D) payload.
std::uint64_t perturb_last(Tensor &payload, double sigma, CounterRng &rng) {
  if (payload.rank() != 3) throw NumericError("noise payload must be (B, S, D), got " + payload.shape_string());
  const std::uint64_t before = rng.gaussian_draws();
  if (sigma == 0.0) return 0;
  auto last = payload.row(payload.dims[1] - 1);
  const Tensor eps = gaussian_vector(rng, last.size(), sigma);
  for (std::size_t i = 0; i < last.size(); ++i) last[i] += eps.data[i];
  return rng.gaussian_draws() - before;
}

bool inject_fixed(HookEvent &ev, HookSite site, const NoiseSpec &spec, const DecaySchedule &schedule,
                  CounterRng &rng, NoiseTrace *trace, bool layer_filter) {
  if (ev.site != site || ev.phase != Phase::Decode || ev.read_only) return false;
  if (layer_filter && !targets(spec, ev.layer)) return false;
  const double sigma = spec.base_sigma * schedule(ev.step);
  const std::uint64_t draws = perturb_last(ev.payload, sigma, rng);
  if (trace) trace->push_back({ev.step, spec.site, ev.layer, std::nullopt, sigma, draws});
  return sigma > 0.0;
}

}  // namespace

bool inject_embedding(HookEvent &ev, const NoiseSpec &spec, const DecaySchedule &schedule, CounterRng &rng,
                      NoiseTrace *trace) {
  return inject_fixed(ev, HookSite::EmbeddingOut, spec, schedule, rng, trace, false);
}

bool inject_attention_output(HookEvent &ev, const NoiseSpec &spec, const DecaySchedule &schedule, CounterRng &rng,
                             NoiseTrace *trace) {
  return inject_fixed(ev, HookSite::AttentionOut, spec, schedule, rng, trace, true);
}

bool inject_residual(HookEvent &ev, const NoiseSpec &spec, const DecaySchedule &schedule, CounterRng &rng,
                     NoiseTrace *trace) {
  return inject_fixed(ev, HookSite::BlockOut, spec, schedule, rng, trace, true);
}

bool inject_aeni(HookEvent &ev, const NoiseSpec &spec, const DecaySchedule &schedule, double phi, CounterRng &rng,
                 NoiseTrace *trace) {
  if (ev.site != HookSite::AttentionOut || ev.phase != Phase::Decode || ev.read_only) return false;
  if (!targets(spec, ev.layer)) return false;
  if (!(phi > 0.0 && phi <= 1.0 + 1e-6)) throw NumericError("peakedness outside (0, 1]: " + std::to_string(phi));
  const double delta = spec.aeni_decay ? schedule(ev.step) : 1.0;
  const double sigma = aeni_sigma(spec.base_sigma, phi, delta);
  const std::uint64_t draws = perturb_last(ev.payload, sigma, rng);
  if (trace) trace->push_back({ev.step, spec.site, ev.layer, phi, sigma, draws});
  return sigma > 0.0;
}

NoiseInjector::NoiseInjector(NoiseSpec spec, const ModelConfig &config, std::uint64_t generation_seed)
    : spec_(std::move(spec)), schedule_{spec_.decay_horizon}, rng_(derive_seed(spec_.seed, generation_seed), 0xA015E),
      phi_(config.n_layers), phi_step_(config.n_layers, -1) {
  spec_.validate(config);
  spec_.layers = spec_.resolved_layers(config);
}

void NoiseInjector::operator()(HookEvent &ev) {
  switch (spec_.site) {
    case NoiseSite::Embedding:
      inject_embedding(ev, spec_, schedule_, rng_, &trace_);
      break;
    case NoiseSite::AttentionOutput:
      inject_attention_output(ev, spec_, schedule_, rng_, &trace_);
      break;
    case NoiseSite::ResidualStream:
      inject_residual(ev, spec_, schedule_, rng_, &trace_);
      break;
    case NoiseSite::Aeni:
      if (ev.phase != Phase::Decode || ev.layer < 0 || !targets(spec_, ev.layer)) break;
      if (ev.site == HookSite::AttentionWeights) {
        phi_[ev.layer] = aeni_peakedness(last_query_rows(ev.payload));
        phi_step_[ev.layer] = ev.step;
      } else if (ev.site == HookSite::AttentionOut) {
        if (!phi_[ev.layer] || phi_step_[ev.layer] != ev.step)
          throw NumericError("AENI: no attention weights seen for layer " + std::to_string(ev.layer) + " at step " +
                             std::to_string(ev.step));
        inject_aeni(ev, spec_, schedule_, *phi_[ev.layer], rng_, &trace_);
      }
      break;
  }
}

Hook NoiseInjector::hook() {
  return [this](HookEvent &ev) { (*this)(ev); };
}

}  // namespace nstm
