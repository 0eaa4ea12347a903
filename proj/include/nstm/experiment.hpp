#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nstm/calibration.hpp"
#include "nstm/generation.hpp"
#include "nstm/metrics.hpp"
#include "nstm/stats.hpp"

namespace nstm {

inline constexpr int kConfigSchema = 1;
inline constexpr const char *kOutEnvVar = "NSTM_OUT";
inline constexpr const char *kBaselineName = "baseline";

// One [condition:NAME] section before calibration values are known.
struct ConditionSpec {
  std::string name;
  SamplingConfig sampling;
  std::optional<NoiseSite> site;
  std::optional<double> sigma;  // nullopt: take the calibrated value for the site
  std::vector<int> layers;
  std::optional<int> decay_horizon;  // default: max_new_tokens
  bool aeni_decay = true;
  std::optional<std::uint64_t> noise_seed;
};

// A per-story numeric column ingested from CSV (condition,story_index,value).
struct CustomColumn {
  std::filesystem::path path;
  Direction direction = Direction::HigherIsBetter;
};

struct ExperimentConfig {
  std::filesystem::path config_path;
  std::filesystem::path model_path;
  std::filesystem::path vocab_path;
  std::string stop_word = "<eos>";

  std::filesystem::path prompt_path;
  std::filesystem::path calibration_prompts_path;
  std::string prompt_set_id = "calibration";
  CalibrationOptions calibration;

  int n_stories = 50;
  std::uint64_t base_seed = 0;
  std::optional<std::filesystem::path> seeds_path;
  std::uint64_t noise_seed = 0;
  int max_new_tokens = 96;
  std::vector<ConditionSpec> conditions;

  std::filesystem::path lexicon_path;
  MetricSettings metrics;
  std::size_t embedding_dim = 512;
  std::optional<std::filesystem::path> embeddings_path;
  LeveneCenter levene_center = LeveneCenter::Mean;
  std::map<std::string, CustomColumn> columns;

  std::filesystem::path output_dir;

  const ConditionSpec &condition(const std::string &name) const;  // UsageError if unknown
  std::string model_id() const { return model_path.stem().string(); }
};

// The seven conditions of the reference protocol: baseline, two
// high-temperature controls and the four noise sites with calibrated sigma.
std::vector<ConditionSpec> default_conditions(int max_new_tokens);

// Parses the INI-style config. Relative paths resolve against the config
// file's directory. Output directory precedence: `out_override`, then the
// NSTM_OUT environment variable, then the config.
ExperimentConfig load_experiment_config(const std::filesystem::path &path,
                                        const std::optional<std::filesystem::path> &out_override = std::nullopt);

Condition resolve_condition(const ConditionSpec &spec, const ModelConfig &model,
                            const std::optional<CalibrationReport> &calibration, std::uint64_t default_noise_seed);

std::vector<std::uint64_t> experiment_seeds(const ExperimentConfig &config);

// Artifact locations under the output directory.
std::filesystem::path calibration_file(const ExperimentConfig &config);
std::filesystem::path corpus_file(const ExperimentConfig &config, const std::string &condition);
std::filesystem::path report_file(const ExperimentConfig &config, const std::string &condition);
std::filesystem::path stats_file(const ExperimentConfig &config, const std::string &metric);

// Pipeline stages. Each reads only its inputs and writes only its own
// artifacts; reruns on unchanged inputs are byte-identical.
CalibrationReport cmd_calibrate(const ExperimentConfig &config, std::ostream &log);
void cmd_generate(const ExperimentConfig &config, const std::optional<std::string> &condition, int workers,
                  std::ostream &log);
void cmd_evaluate(const ExperimentConfig &config, int workers, std::ostream &log);
void cmd_stats(const ExperimentConfig &config, const std::string &metric, std::ostream &log);
void cmd_report(const ExperimentConfig &config, std::ostream &log);

// Stats over already-built groups, the part of cmd_stats that does not touch
// files. Groups are in config order; `excluded` lists dropped conditions.
nlohmann::json stats_report(const std::string &metric, Direction direction, const std::string &model_id,
                            const std::vector<SampleGroup> &groups, const std::vector<std::string> &excluded,
                            LeveneCenter center);

}  // namespace nstm
