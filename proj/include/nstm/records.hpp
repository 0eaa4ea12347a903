#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "nstm/calibration.hpp"
#include "nstm/generation.hpp"
#include "nstm/metrics.hpp"

namespace nstm {

// Schema versions written into every artifact.
inline constexpr int kCorpusSchema = 1;
inline constexpr int kCalibrationSchema = 1;
inline constexpr int kReportSchema = 1;
inline constexpr int kStatsSchema = 1;

nlohmann::json to_json(const SamplingConfig &s);
SamplingConfig sampling_from_json(const nlohmann::json &j);
nlohmann::json to_json(const NoiseSpec &s);
NoiseSpec noise_spec_from_json(const nlohmann::json &j);
nlohmann::json to_json(const NoiseTraceEntry &e);

nlohmann::json to_json(const GenerationRecord &r);
GenerationRecord record_from_json(const nlohmann::json &j);

nlohmann::json to_json(const CalibrationReport &r);
CalibrationReport calibration_from_json(const nlohmann::json &j);

nlohmann::json to_json(const ConditionReport &r);
ConditionReport condition_report_from_json(const nlohmann::json &j);

// One record per line, in the given order.
std::string corpus_to_jsonl(const std::vector<GenerationRecord> &records);
std::vector<GenerationRecord> read_corpus(const std::filesystem::path &path);

nlohmann::json read_json_file(const std::filesystem::path &path);
// Writes via a temporary sibling and rename, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path &path, const std::string &contents);

}  // namespace nstm
