#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "nstm/tensor.hpp"

namespace nstm {

using TokenId = std::uint32_t;

struct ModelConfig {
  std::uint32_t n_layers = 4;
  std::uint32_t n_heads = 4;
  std::uint32_t d_model = 64;
  std::uint32_t d_ff = 256;
  std::uint32_t vocab_size = 256;
  std::uint32_t max_seq_len = 256;
  float norm_eps = 1e-6f;
  float rope_base = 10000.0f;

  std::uint32_t head_dim() const { return d_model / n_heads; }
  // Throws DataError naming the offending field.
  void validate() const;
  bool operator==(const ModelConfig &) const = default;
};

// Matrices are stored (out, in) row-major so a projection is one matvec.
struct BlockWeights {
  Tensor attn_norm;  // (D)
  Tensor wq, wk, wv, wo;  // (D, D)
  Tensor mlp_norm;  // (D)
  Tensor w_up;  // (d_ff, D)
  Tensor b_up;  // (d_ff)
  Tensor w_down;  // (D, d_ff)
  Tensor b_down;  // (D)
};

struct ModelWeights {
  Tensor tok_emb;  // (V, D)
  std::vector<BlockWeights> blocks;
  Tensor final_norm;  // (D)
  Tensor lm_head;  // (V, D)
};

// Per-layer key/value storage laid out (H, capacity, head_dim). Keys are
// stored after rotary mixing. `length` is shared by every layer.
class KVCache {
 public:
  KVCache() = default;
  KVCache(std::size_t n_layers, std::size_t n_heads, std::size_t capacity, std::size_t head_dim);

  std::size_t length() const { return length_; }
  std::size_t prompt_length() const { return prompt_length_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t n_layers() const { return keys_.size(); }
  std::size_t n_heads() const { return n_heads_; }
  std::size_t head_dim() const { return head_dim_; }

  std::span<const float> key(std::size_t layer, std::size_t head, std::size_t pos) const;
  std::span<const float> value(std::size_t layer, std::size_t head, std::size_t pos) const;
  std::span<float> key(std::size_t layer, std::size_t head, std::size_t pos);
  std::span<float> value(std::size_t layer, std::size_t head, std::size_t pos);

  // (B=1, H, T_k, d) snapshot of one layer's live entries.
  Tensor keys_tensor(std::size_t layer) const;
  Tensor values_tensor(std::size_t layer) const;

  void advance(std::size_t n) { length_ += n; }
  void mark_prompt() { prompt_length_ = length_; }

 private:
  std::size_t n_heads_ = 0, capacity_ = 0, head_dim_ = 0;
  std::size_t length_ = 0, prompt_length_ = 0;
  std::vector<std::vector<float>> keys_, values_;
};

enum class HookSite { EmbeddingOut, AttentionOut, BlockOut, AttentionWeights };
enum class Phase { Prefill, Decode };

const char *to_string(HookSite site);

// One hook invocation. `payload` is (1, S, D) for the mutable sites and
// (1, H, S, T_k) for AttentionWeights, where S is the number of positions in
// this pass (prompt length in prefill, 1 in decode). AttentionWeights
// payloads are copies, so writes to them never reach the model.
struct HookEvent {
  HookSite site;
  int layer;  // -1 for EmbeddingOut
  int step;   // decode step, 0 for the first decode call; -1 in prefill
  Phase phase;
  Tensor &payload;
  bool read_only;
};

using Hook = std::function<void(HookEvent &)>;
using Hooks = std::vector<Hook>;

void softmax_inplace(std::span<float> v);
std::vector<float> softmax(std::span<const float> v);
// RMS normalization with learned gain: out = v / sqrt(mean(v^2) + eps) * gain.
void rms_norm(std::span<const float> v, std::span<const float> gain, float eps, std::span<float> out);
std::vector<float> rms_norm(std::span<const float> v, std::span<const float> gain, float eps);
float gelu(float x);
// Rotates consecutive pairs of `v` (one head) by position-dependent angles.
void apply_rope(std::span<float> v, std::size_t pos, float base);

struct PrefillResult {
  Tensor logits;  // (V) for the last prompt position
  KVCache cache;
};

// Decoder-only transformer. Immutable after construction; one instance can
// serve any number of concurrent generations, each with its own KVCache.
class Model {
 public:
  Model(ModelConfig config, ModelWeights weights);

  const ModelConfig &config() const { return config_; }
  const ModelWeights &weights() const { return weights_; }

  KVCache make_cache() const;

  PrefillResult forward_prefill(std::span<const TokenId> tokens, const Hooks &hooks = {}) const;
  Tensor forward_decode(TokenId token, KVCache &cache, const Hooks &hooks = {}) const;

  // One block over h_prev (1, S, D) at positions [cache.length(), +S). Writes
  // this layer's keys/values into the cache but does not advance it.
  Tensor block_forward(const Tensor &h_prev, std::size_t layer, KVCache &cache, const Hooks &hooks,
                       Phase phase, int step) const;

  // Final norm + output head over a single residual vector (D) -> logits (V).
  Tensor head(std::span<const float> residual) const;

  // Copy whose every block output is scaled by c: scales the embedding
  // table, W_O, W_down and b_down. Norm inputs are scale-free up to eps.
  Model scaled_residual(float c) const;

 private:
  Tensor embed(std::span<const TokenId> tokens) const;
  Tensor run_blocks(Tensor h, KVCache &cache, const Hooks &hooks, Phase phase, int step) const;
  void check_tokens(std::span<const TokenId> tokens) const;

  ModelConfig config_;
  ModelWeights weights_;
};

// Validates every weight shape against the config; throws DataError.
void validate_weights(const ModelConfig &config, const ModelWeights &weights);

}  // namespace nstm
