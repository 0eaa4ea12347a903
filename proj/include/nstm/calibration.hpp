#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "nstm/model.hpp"

namespace nstm {

struct CalibrationOptions {
  double alpha = 0.175;
  int steps_per_prompt = 16;
  // Default reduces each block output to its mean over batch and hidden
  // dims before squaring. Elementwise mode squares first (conventional RMS).
  bool elementwise_rms = false;
  std::string prompt_set_id = "unnamed";
};

struct CalibrationReport {
  std::map<int, double> per_layer_rms;
  double median_rms = 0.0;
  double alpha = 0.0;
  double sigma_res = 0.0;
  // The other sites default to sigma_res; each can be overridden later.
  double sigma_emb = 0.0;
  double sigma_attn = 0.0;
  double sigma_aeni = 0.0;
  int decode_steps_collected = 0;
  std::string prompt_set_id;
  bool elementwise_rms = false;

  bool operator==(const CalibrationReport &) const = default;
};

// Per-step scalar for one (B, S, D) block output at its last position: the
// mean over batch and hidden dims, or the mean of squares in elementwise mode.
double block_output_statistic(const Tensor &block_out, bool elementwise);

// sqrt((1/C) * sum_c x_c^2) over C block outputs.
double layer_rms(std::span<const Tensor> block_outputs, bool elementwise = false);

// Median; even counts average the two middle order statistics.
double median(std::vector<double> values);

// Noise-free greedy decoding over the prompts, collecting BlockOut at every
// block except the first and last during decode steps only.
CalibrationReport calibrate(const Model &model, const std::vector<std::vector<TokenId>> &prompts,
                            const CalibrationOptions &options);

}  // namespace nstm
