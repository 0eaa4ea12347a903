#include "nstm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "nstm/errors.hpp"
#include "nstm/kernels.hpp"

namespace nstm {

namespace mv = kernels::parallel;

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string &msg) {
    if (!ok) throw DataError("model config: " + msg);
  };
  need(n_layers >= 2, "n_layers must be >= 2, got " + std::to_string(n_layers));
  need(n_heads >= 1, "n_heads must be >= 1");
  need(d_model >= 1, "d_model must be positive");
  need(d_model % n_heads == 0, "dimension mismatch: d_model " + std::to_string(d_model) +
                                   " is not divisible by n_heads " + std::to_string(n_heads));
  need(head_dim() % 2 == 0, "head_dim must be even for rotary mixing");
  need(d_ff >= 1, "d_ff must be positive");
  need(vocab_size >= 1, "vocab_size must be positive");
  need(max_seq_len >= 1, "max_seq_len must be positive");
  need(std::isfinite(norm_eps) && norm_eps > 0.0f, "norm_eps must be finite and > 0");
  need(std::isfinite(rope_base) && rope_base > 1.0f, "rope_base must be > 1");
}

const char *to_string(HookSite site) {
  switch (site) {
    case HookSite::EmbeddingOut: return "EmbeddingOut";
    case HookSite::AttentionOut: return "AttentionOut";
    case HookSite::BlockOut: return "BlockOut";
    case HookSite::AttentionWeights: return "AttentionWeights";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// KVCache

KVCache::KVCache(std::size_t n_layers, std::size_t n_heads, std::size_t capacity,
                 std::size_t head_dim)
    : n_heads_(n_heads), capacity_(capacity), head_dim_(head_dim),
      keys_(n_layers, std::vector<float>(n_heads * capacity * head_dim, 0.0f)),
      values_(n_layers, std::vector<float>(n_heads * capacity * head_dim, 0.0f)) {}

std::span<const float> KVCache::key(std::size_t layer, std::size_t head, std::size_t pos) const {
  return std::span<const float>(keys_[layer]).subspan((head * capacity_ + pos) * head_dim_, head_dim_);
}
std::span<const float> KVCache::value(std::size_t layer, std::size_t head, std::size_t pos) const {
  return std::span<const float>(values_[layer]).subspan((head * capacity_ + pos) * head_dim_, head_dim_);
}
std::span<float> KVCache::key(std::size_t layer, std::size_t head, std::size_t pos) {
  return std::span<float>(keys_[layer]).subspan((head * capacity_ + pos) * head_dim_, head_dim_);
}
std::span<float> KVCache::value(std::size_t layer, std::size_t head, std::size_t pos) {
  return std::span<float>(values_[layer]).subspan((head * capacity_ + pos) * head_dim_, head_dim_);
}

namespace {

Tensor snapshot(const KVCache &c, std::size_t layer, bool keys) {
  Tensor t({1, c.n_heads(), c.length(), c.head_dim()});
  for (std::size_t h = 0; h < c.n_heads(); ++h)
    for (std::size_t p = 0; p < c.length(); ++p) {
      auto src = keys ? c.key(layer, h, p) : c.value(layer, h, p);
      std::copy(src.begin(), src.end(), t.data.begin() + (h * c.length() + p) * c.head_dim());
    }
  return t;
}

}  // namespace

Tensor KVCache::keys_tensor(std::size_t layer) const { return snapshot(*this, layer, true); }
Tensor KVCache::values_tensor(std::size_t layer) const { return snapshot(*this, layer, false); }

// ---------------------------------------------------------------------------
// Elementwise pieces

void softmax_inplace(std::span<float> v) {
  if (v.empty()) return;
  const float mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (float &x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  const float inv = static_cast<float>(1.0 / sum);
  for (float &x : v) x *= inv;
}

std::vector<float> softmax(std::span<const float> v) {
  std::vector<float> out(v.begin(), v.end());
  softmax_inplace(out);
  return out;
}

void rms_norm(std::span<const float> v, std::span<const float> gain, float eps, std::span<float> out) {
  double ss = 0.0;
  for (float x : v) ss += static_cast<double>(x) * x;
  const float inv = static_cast<float>(1.0 / std::sqrt(ss / static_cast<double>(v.size()) + eps));
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * inv * gain[i];
}

std::vector<float> rms_norm(std::span<const float> v, std::span<const float> gain, float eps) {
  std::vector<float> out(v.size());
  rms_norm(v, gain, eps, out);
  return out;
}

float gelu(float x) {
  constexpr float k = 0.7978845608028654f;  // sqrt(2/pi)
  return 0.5f * x * (1.0f + std::tanh(k * (x + 0.044715f * x * x * x)));
}

void apply_rope(std::span<float> v, std::size_t pos, float base) {
  const std::size_t d = v.size();
  for (std::size_t i = 0; i + 1 < d; i += 2) {
    const double theta = static_cast<double>(pos) *
                         std::pow(static_cast<double>(base), -static_cast<double>(i) / static_cast<double>(d));
    const float c = static_cast<float>(std::cos(theta));
    const float s = static_cast<float>(std::sin(theta));
    const float a = v[i], b = v[i + 1];
    v[i] = a * c - b * s;
    v[i + 1] = a * s + b * c;
  }
}

// ---------------------------------------------------------------------------
// Model

void validate_weights(const ModelConfig &cfg, const ModelWeights &w) {
  cfg.validate();
  const std::size_t D = cfg.d_model, F = cfg.d_ff, V = cfg.vocab_size;
  auto expect = [](const Tensor &t, std::vector<std::size_t> dims, const std::string &name) {
    if (t.dims != dims)
      throw DataError("dimension mismatch in '" + name + "': got " + t.shape_string() + ", expected " +
                      Tensor(dims).shape_string());
    if (t.numel() != Tensor::numel_of(t.dims)) throw DataError("tensor '" + name + "' payload size mismatch");
    if (!t.all_finite()) throw DataError("non-finite weight in '" + name + "'");
  };
  expect(w.tok_emb, {V, D}, "tok_emb");
  if (w.blocks.size() != cfg.n_layers)
    throw DataError("model has " + std::to_string(w.blocks.size()) + " blocks, config says " +
                    std::to_string(cfg.n_layers));
  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    const auto &b = w.blocks[l];
    const std::string p = "blk." + std::to_string(l) + ".";
    expect(b.attn_norm, {D}, p + "attn_norm");
    expect(b.wq, {D, D}, p + "wq");
    expect(b.wk, {D, D}, p + "wk");
    expect(b.wv, {D, D}, p + "wv");
    expect(b.wo, {D, D}, p + "wo");
    expect(b.mlp_norm, {D}, p + "mlp_norm");
    expect(b.w_up, {F, D}, p + "w_up");
    expect(b.b_up, {F}, p + "b_up");
    expect(b.w_down, {D, F}, p + "w_down");
    expect(b.b_down, {D}, p + "b_down");
  }
  expect(w.final_norm, {D}, "final_norm");
  expect(w.lm_head, {V, D}, "lm_head");
}

Model::Model(ModelConfig config, ModelWeights weights)
    : config_(config), weights_(std::move(weights)) {
  validate_weights(config_, weights_);
}

KVCache Model::make_cache() const {
  return KVCache(config_.n_layers, config_.n_heads, config_.max_seq_len, config_.head_dim());
}

void Model::check_tokens(std::span<const TokenId> tokens) const {
  for (TokenId t : tokens)
    if (t >= config_.vocab_size)
      throw DataError("token id " + std::to_string(t) + " >= vocab_size " + std::to_string(config_.vocab_size));
}

Tensor Model::embed(std::span<const TokenId> tokens) const {
  const std::size_t D = config_.d_model;
  Tensor h({1, tokens.size(), D});
  for (std::size_t s = 0; s < tokens.size(); ++s) {
    auto src = weights_.tok_emb.row(tokens[s]);
    std::copy(src.begin(), src.end(), h.row(s).begin());
  }
  return h;
}

namespace {

void fire(const Hooks &hooks, HookSite site, int layer, int step, Phase phase, Tensor &payload) {
  if (hooks.empty()) return;
  const auto dims = payload.dims;
  for (const auto &hook : hooks) {
    HookEvent ev{site, layer, step, phase, payload, false};
    hook(ev);
    if (payload.dims != dims || payload.numel() != Tensor::numel_of(dims))
      throw NumericError(std::string("hook changed the shape of the ") + to_string(site) + " payload");
  }
}

void fire_read_only(const Hooks &hooks, HookSite site, int layer, int step, Phase phase, const Tensor &payload) {
  if (hooks.empty()) return;
  for (const auto &hook : hooks) {
    Tensor copy = payload;
    HookEvent ev{site, layer, step, phase, copy, true};
    hook(ev);
  }
}

void require_finite(const Tensor &t, const char *what, std::size_t layer) {
  if (!t.all_finite())
    throw NumericError(std::string("non-finite values in ") + what + " at layer " + std::to_string(layer));
}

}  // namespace

Tensor Model::block_forward(const Tensor &h_prev, std::size_t layer, KVCache &cache, const Hooks &hooks,
                            Phase phase, int step) const {
  const auto &w = weights_.blocks.at(layer);
  const std::size_t D = config_.d_model, H = config_.n_heads, hd = config_.head_dim(), F = config_.d_ff;
  const std::size_t S = h_prev.dims.at(1);
  const std::size_t pos0 = cache.length();
  const std::size_t Tk = pos0 + S;
  if (Tk > cache.capacity()) throw DataError("sequence exceeds context limit " + std::to_string(cache.capacity()));
  const float eps = config_.norm_eps;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

  // Q/K/V for the new positions; K/V go into the cache before any hook runs.
  std::vector<float> q(S * D), x(D), k(D), v(D);
  for (std::size_t s = 0; s < S; ++s) {
    rms_norm(h_prev.row(s), w.attn_norm.span(), eps, x);
    std::span<float> qs(q.data() + s * D, D);
    mv::matvec(w.wq.span(), D, D, x, qs);
    mv::matvec(w.wk.span(), D, D, x, k);
    mv::matvec(w.wv.span(), D, D, x, v);
    for (std::size_t h = 0; h < H; ++h) {
      apply_rope(qs.subspan(h * hd, hd), pos0 + s, config_.rope_base);
      std::span<float> kh(k.data() + h * hd, hd);
      apply_rope(kh, pos0 + s, config_.rope_base);
      std::copy(kh.begin(), kh.end(), cache.key(layer, h, pos0 + s).begin());
      std::copy(v.begin() + h * hd, v.begin() + (h + 1) * hd, cache.value(layer, h, pos0 + s).begin());
    }
  }

  // Causal attention weights (1, H, S, Tk); masked entries are exactly 0.
  Tensor weights({1, H, S, Tk});
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t visible = pos0 + s + 1;
      std::span<float> row = weights.row(h * S + s);
      std::span<const float> qh(q.data() + s * D + h * hd, hd);
      for (std::size_t j = 0; j < visible; ++j)
        row[j] = static_cast<float>(kernels::dot(qh, cache.key(layer, h, j))) * scale;
      softmax_inplace(row.first(visible));
    }
  }
  fire_read_only(hooks, HookSite::AttentionWeights, static_cast<int>(layer), step, phase, weights);

  Tensor attn({1, S, D});
  std::vector<float> ctx(D);
  for (std::size_t s = 0; s < S; ++s) {
    std::fill(ctx.begin(), ctx.end(), 0.0f);
    for (std::size_t h = 0; h < H; ++h) {
      std::span<const float> row = weights.row(h * S + s);
      for (std::size_t i = 0; i < hd; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < pos0 + s + 1; ++j) acc += static_cast<double>(row[j]) * cache.value(layer, h, j)[i];
        ctx[h * hd + i] = static_cast<float>(acc);
      }
    }
    mv::matvec(w.wo.span(), D, D, ctx, attn.row(s));
  }
  fire(hooks, HookSite::AttentionOut, static_cast<int>(layer), step, phase, attn);

  // h_next = h_prev + a + MLP(Norm2(a + h_prev))
  Tensor out({1, S, D});
  std::vector<float> u(D), n(D), up(F), down(D);
  for (std::size_t s = 0; s < S; ++s) {
    auto hp = h_prev.row(s);
    auto a = attn.row(s);
    for (std::size_t i = 0; i < D; ++i) u[i] = a[i] + hp[i];
    rms_norm(u, w.mlp_norm.span(), eps, n);
    mv::matvec(w.w_up.span(), F, D, n, up, w.b_up.span());
    for (float &z : up) z = gelu(z);
    mv::matvec(w.w_down.span(), D, F, up, down, w.b_down.span());
    auto o = out.row(s);
    for (std::size_t i = 0; i < D; ++i) o[i] = hp[i] + a[i] + down[i];
  }
  require_finite(out, "block output", layer);
  fire(hooks, HookSite::BlockOut, static_cast<int>(layer), step, phase, out);
  require_finite(out, "hooked block output", layer);
  return out;
}

Tensor Model::run_blocks(Tensor h, KVCache &cache, const Hooks &hooks, Phase phase, int step) const {
  fire(hooks, HookSite::EmbeddingOut, -1, step, phase, h);
  require_finite(h, "embedding output", 0);
  for (std::size_t l = 0; l < config_.n_layers; ++l) h = block_forward(h, l, cache, hooks, phase, step);
  cache.advance(h.dims[1]);
  return h;
}

Tensor Model::head(std::span<const float> residual) const {
  const std::size_t D = config_.d_model, V = config_.vocab_size;
  std::vector<float> n(D);
  rms_norm(residual, weights_.final_norm.span(), config_.norm_eps, n);
  Tensor logits({V});
  mv::matvec(weights_.lm_head.span(), V, D, n, logits.span());
  if (!logits.all_finite()) throw NumericError("non-finite logits");
  return logits;
}

PrefillResult Model::forward_prefill(std::span<const TokenId> tokens, const Hooks &hooks) const {
  if (tokens.empty()) throw DataError("prefill: empty prompt");
  if (tokens.size() > config_.max_seq_len)
    throw DataError("prefill: prompt of " + std::to_string(tokens.size()) + " tokens exceeds context limit " +
                    std::to_string(config_.max_seq_len));
  check_tokens(tokens);
  PrefillResult r{Tensor{}, make_cache()};
  Tensor h = run_blocks(embed(tokens), r.cache, hooks, Phase::Prefill, -1);
  r.cache.mark_prompt();
  r.logits = head(h.row(tokens.size() - 1));
  return r;
}

Tensor Model::forward_decode(TokenId token, KVCache &cache, const Hooks &hooks) const {
  if (cache.length() < 1) throw DataError("decode: cache is empty, run prefill first");
  if (cache.length() >= config_.max_seq_len)
    throw DataError("decode: context limit " + std::to_string(config_.max_seq_len) + " reached");
  const TokenId one[1] = {token};
  check_tokens(one);
  const int step = static_cast<int>(cache.length() - cache.prompt_length());
  Tensor h = run_blocks(embed(one), cache, hooks, Phase::Decode, step);
  return head(h.row(0));
}

Model Model::scaled_residual(float c) const {
  ModelWeights w = weights_;
  auto scale = [c](Tensor &t) {
    for (float &x : t.data) x *= c;
  };
  scale(w.tok_emb);
  for (auto &b : w.blocks) {
    scale(b.wo);
    scale(b.w_down);
    scale(b.b_down);
  }
  return Model(config_, std::move(w));
}

}  // namespace nstm
