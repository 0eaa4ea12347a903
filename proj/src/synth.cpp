#include "nstm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nstm/errors.hpp"
#include "nstm/rng.hpp"

namespace nstm {

namespace {

Tensor gaussian_tensor(std::vector<std::size_t> dims, float std, CounterRng &rng) {
  Tensor t(std::move(dims));
  for (float &x : t.data) x = static_cast<float>(rng.gaussian() * std);
  return t;
}

// Fisher-Yates driven by the counter stream.
template <class T>
void shuffle(std::vector<T> &v, CounterRng &rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(v[i - 1], v[j]);
  }
}

void write_bigram_structure(const SynthOptions &o, ModelWeights &w, CounterRng &rng) {
  const std::size_t V = o.config.vocab_size, D = o.config.d_model;
  if (V < 4) throw DataError("bigram synthesis needs vocab_size >= 4");

  // Centred token directions; the shared offset is orthogonal to all of them.
  std::vector<std::vector<double>> z(V, std::vector<double>(D));
  std::vector<double> norm2(V);
  for (std::size_t v = 0; v < V; ++v) {
    double mean = 0.0;
    for (auto &x : z[v]) mean += (x = rng.gaussian() * o.embed_std);
    mean /= static_cast<double>(D);
    double n2 = 0.0;
    for (auto &x : z[v]) {
      x -= mean;
      n2 += x * x;
    }
    norm2[v] = n2;
    for (std::size_t i = 0; i < D; ++i) w.tok_emb.data[v * D + i] = static_cast<float>(z[v][i] + o.dc_offset);
  }

  // M[v][u]: affinity of successor u after v. Id 0 is the end token.
  std::vector<std::vector<std::pair<std::size_t, double>>> succ(V);
  std::vector<std::size_t> order(V - 1);
  std::iota(order.begin(), order.end(), 1);
  shuffle(order, rng);
  for (std::size_t i = 0; i < order.size(); ++i) succ[order[i]].emplace_back(order[(i + 1) % order.size()], 1.0);
  for (std::size_t v = 1; v < V; ++v) {
    for (std::uint32_t e = 0; e < o.extra_successors; ++e) {
      const double frac = o.extra_successors > 1 ? static_cast<double>(e) / (o.extra_successors - 1) : 0.0;
      const double weight = o.extra_weight_hi + frac * (o.extra_weight_lo - o.extra_weight_hi);
      succ[v].emplace_back(1 + rng.next_u64() % (V - 1), weight);
    }
    if (rng.uniform() < o.end_rate) succ[v].emplace_back(0, o.end_weight);
  }
  // The end token is never fed back in; give it the cycle start as successor.
  succ[0].emplace_back(order[0], 1.0);

  // head[u] = scale * rms * sum_v M[v][u] z_v / |z_v|^2, so that for h = e_v
  // the logit of u is about scale * M[v][u].
  const double rms = std::sqrt(static_cast<double>(o.embed_std) * o.embed_std * (D - 1) / D +
                               static_cast<double>(o.dc_offset) * o.dc_offset);
  std::vector<double> head(V * D, 0.0);
  for (std::size_t v = 0; v < V; ++v)
    for (auto [u, m] : succ[v])
      for (std::size_t i = 0; i < D; ++i) head[u * D + i] += o.head_scale * rms * m * z[v][i] / norm2[v];
  for (std::size_t k = 0; k < head.size(); ++k) w.lm_head.data[k] = static_cast<float>(head[k]);
}

}  // namespace

Model make_synthetic_model(const SynthOptions &o) {
  const ModelConfig &cfg = o.config;
  cfg.validate();
  const std::size_t D = cfg.d_model, F = cfg.d_ff, V = cfg.vocab_size;
  CounterRng rng(o.seed, 0x5EED);
  const float s = o.init_std;

  ModelWeights w;
  w.tok_emb = gaussian_tensor({V, D}, s, rng);
  w.blocks.resize(cfg.n_layers);
  for (auto &b : w.blocks) {
    b.attn_norm = Tensor({D}, 1.0f);
    b.wq = gaussian_tensor({D, D}, s, rng);
    b.wk = gaussian_tensor({D, D}, s, rng);
    b.wv = gaussian_tensor({D, D}, s, rng);
    b.wo = gaussian_tensor({D, D}, s, rng);
    b.mlp_norm = Tensor({D}, 1.0f);
    b.w_up = gaussian_tensor({F, D}, s, rng);
    b.b_up = Tensor({F}, 0.0f);
    b.w_down = gaussian_tensor({D, F}, s, rng);
    b.b_down = Tensor({D}, 0.0f);
  }
  w.final_norm = Tensor({D}, 1.0f);
  w.lm_head = gaussian_tensor({V, D}, s, rng);
  if (o.bigram) write_bigram_structure(o, w, rng);
  return Model(cfg, std::move(w));
}

SynthOptions fixture_synth_options(std::uint64_t seed) {
  SynthOptions o;
  o.config = ModelConfig{};
  o.seed = seed;
  o.bigram = true;
  o.dc_offset = 3.0f;
  return o;
}

}  // namespace nstm
