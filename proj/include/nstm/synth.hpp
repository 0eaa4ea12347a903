#pragma once

#include <cstdint>

#include "nstm/model.hpp"

namespace nstm {

struct SynthOptions {
  ModelConfig config;
  std::uint64_t seed = 0;
  float init_std = 0.02f;

  // When set, the embedding table and output head encode a sparse bigram
  // language model carried through the residual stream: every non-end token
  // has one dominant successor (the successors form a single cycle over the
  // vocabulary) plus a few weaker ones. Blocks keep the small random init.
  bool bigram = false;
  float embed_std = 1.0f;
  // Shared offset added to every embedding element. Trained models carry a
  // nonzero mean in the residual stream; this reproduces that at toy scale.
  float dc_offset = 0.0f;
  float head_scale = 8.0f;
  std::uint32_t extra_successors = 2;
  float extra_weight_hi = 0.6f;
  float extra_weight_lo = 0.45f;
  // Fraction of tokens that may be followed by the end token (id 0).
  float end_rate = 0.08f;
  float end_weight = 0.55f;
};

Model make_synthetic_model(const SynthOptions &options);

// The bundled fixture: 4 layers, 4 heads, d_model 64, 256-word vocabulary,
// bigram structure with a residual offset.
SynthOptions fixture_synth_options(std::uint64_t seed);

}  // namespace nstm
