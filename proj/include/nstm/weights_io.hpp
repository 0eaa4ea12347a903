#pragma once

#include <filesystem>

#include "nstm/model.hpp"

namespace nstm {

// Weight file layout (little-endian):
//   "NSTM" | u32 version | u32 n_layers, n_heads, d_model, d_ff, vocab_size,
//   max_seq_len | u32 norm_eps bits | u32 rope_base bits | u32 tensor count |
//   per tensor: u16 name length, utf-8 name, u8 rank, u32 dims[rank], f32 payload.
inline constexpr std::uint32_t kWeightFormatVersion = 1;

Model load_model(const std::filesystem::path &path);
void save_model(const std::filesystem::path &path, const Model &model);

}  // namespace nstm
