#include "nstm/records.hpp"

#include <fstream>
#include <sstream>

#include "nstm/errors.hpp"

namespace nstm {

using nlohmann::json;

json to_json(const SamplingConfig &s) {
  json j{{"temperature", s.temperature}, {"max_new_tokens", s.max_new_tokens}};
  j["top_k"] = s.top_k ? json(*s.top_k) : json(nullptr);
  j["top_p"] = s.top_p ? json(*s.top_p) : json(nullptr);
  j["stop_token"] = s.stop_token ? json(*s.stop_token) : json(nullptr);
  return j;
}

SamplingConfig sampling_from_json(const json &j) {
  SamplingConfig s;
  s.temperature = j.at("temperature").get<double>();
  s.max_new_tokens = j.at("max_new_tokens").get<int>();
  if (!j.at("top_k").is_null()) s.top_k = j.at("top_k").get<int>();
  if (!j.at("top_p").is_null()) s.top_p = j.at("top_p").get<double>();
  if (!j.at("stop_token").is_null()) s.stop_token = j.at("stop_token").get<TokenId>();
  return s;
}

json to_json(const NoiseSpec &s) {
  return json{{"site", to_string(s.site)},         {"base_sigma", s.base_sigma},
              {"layers", s.layers},                {"decay_horizon", s.decay_horizon},
              {"seed", s.seed},                    {"aeni_decay", s.aeni_decay}};
}

NoiseSpec noise_spec_from_json(const json &j) {
  NoiseSpec s;
  s.site = parse_noise_site(j.at("site").get<std::string>());
  s.base_sigma = j.at("base_sigma").get<double>();
  s.layers = j.at("layers").get<std::vector<int>>();
  s.decay_horizon = j.at("decay_horizon").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.aeni_decay = j.at("aeni_decay").get<bool>();
  return s;
}

json to_json(const NoiseTraceEntry &e) {
  json j{{"step", e.step}, {"site", to_string(e.site)}, {"layer", e.layer}, {"sigma_eff", e.sigma_eff}, {"draws", e.draws}};
  j["phi"] = e.phi ? json(*e.phi) : json(nullptr);
  return j;
}

namespace {

NoiseTraceEntry trace_entry_from_json(const json &j) {
  NoiseTraceEntry e;
  e.step = j.at("step").get<int>();
  e.site = parse_noise_site(j.at("site").get<std::string>());
  e.layer = j.at("layer").get<int>();
  e.sigma_eff = j.at("sigma_eff").get<double>();
  e.draws = j.at("draws").get<std::uint64_t>();
  if (!j.at("phi").is_null()) e.phi = j.at("phi").get<double>();
  return e;
}

template <class F>
auto wrap(const std::string &what, F &&f) {
  try {
    return f();
  } catch (const json::exception &e) {
    throw DataError(what + ": " + e.what());
  }
}

}  // namespace

json to_json(const GenerationRecord &r) {
  json trace = json::array();
  for (const auto &e : r.noise_trace) trace.push_back(to_json(e));
  json j{{"schema", kCorpusSchema},
         {"condition", r.condition},
         {"story_index", r.story_index},
         {"seed", r.seed},
         {"sampling", to_json(r.sampling)},
         {"token_ids", r.token_ids},
         {"token_count", r.token_count},
         {"text", r.text},
         {"noise_trace", trace}};
  j["noise"] = r.noise ? to_json(*r.noise) : json(nullptr);
  return j;
}

GenerationRecord record_from_json(const json &j) {
  return wrap("corpus record", [&] {
    if (j.at("schema").get<int>() != kCorpusSchema) throw DataError("unsupported corpus schema");
    GenerationRecord r;
    r.condition = j.at("condition").get<std::string>();
    r.story_index = j.at("story_index").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.sampling = sampling_from_json(j.at("sampling"));
    r.token_ids = j.at("token_ids").get<std::vector<TokenId>>();
    r.token_count = j.at("token_count").get<int>();
    r.text = j.at("text").get<std::string>();
    for (const auto &e : j.at("noise_trace")) r.noise_trace.push_back(trace_entry_from_json(e));
    if (!j.at("noise").is_null()) r.noise = noise_spec_from_json(j.at("noise"));
    return r;
  });
}

json to_json(const CalibrationReport &r) {
  json layers = json::object();
  for (const auto &[l, v] : r.per_layer_rms) layers[std::to_string(l)] = v;
  return json{{"schema", kCalibrationSchema},
              {"per_layer_rms", layers},
              {"median_rms", r.median_rms},
              {"alpha", r.alpha},
              {"sigma_res", r.sigma_res},
              {"sigma_emb", r.sigma_emb},
              {"sigma_attn", r.sigma_attn},
              {"sigma_aeni", r.sigma_aeni},
              {"decode_steps_collected", r.decode_steps_collected},
              {"prompt_set_id", r.prompt_set_id},
              {"reduction", r.elementwise_rms ? "elementwise" : "mean-then-square"}};
}

CalibrationReport calibration_from_json(const json &j) {
  return wrap("calibration report", [&] {
    if (j.at("schema").get<int>() != kCalibrationSchema) throw DataError("unsupported calibration schema");
    CalibrationReport r;
    for (const auto &[k, v] : j.at("per_layer_rms").items()) r.per_layer_rms[std::stoi(k)] = v.get<double>();
    r.median_rms = j.at("median_rms").get<double>();
    r.alpha = j.at("alpha").get<double>();
    r.sigma_res = j.at("sigma_res").get<double>();
    r.sigma_emb = j.at("sigma_emb").get<double>();
    r.sigma_attn = j.at("sigma_attn").get<double>();
    r.sigma_aeni = j.at("sigma_aeni").get<double>();
    r.decode_steps_collected = j.at("decode_steps_collected").get<int>();
    r.prompt_set_id = j.at("prompt_set_id").get<std::string>();
    r.elementwise_rms = j.at("reduction").get<std::string>() == "elementwise";
    return r;
  });
}

json to_json(const ConditionReport &r) {
  auto opt = [](const std::optional<double> &v) { return v ? json(*v) : json(nullptr); };
  return json{{"schema", kReportSchema},
              {"condition", r.condition},
              {"n_stories", r.n_stories},
              {"status", to_string(r.status)},
              {"tmc_detector", r.tmc_detector},
              {"tmc_count", r.tmc_count},
              {"tmc_rate", r.tmc_rate},
              {"diversity_sample", r.diversity_sample},
              {"embedder", r.embedder},
              {"vendi", opt(r.vendi)},
              {"lexical_diversity", opt(r.lexical_diversity)},
              {"lexical_diversity_std", opt(r.lexical_diversity_std)},
              {"mean_violations", r.mean_violations},
              {"per_story_violations", r.per_story_violations},
              {"per_story_tmc", r.per_story_tmc}};
}

ConditionReport condition_report_from_json(const json &j) {
  return wrap("condition report", [&] {
    if (j.at("schema").get<int>() != kReportSchema) throw DataError("unsupported report schema");
    auto opt = [&](const char *k) -> std::optional<double> {
      return j.at(k).is_null() ? std::nullopt : std::optional<double>(j.at(k).get<double>());
    };
    ConditionReport r;
    r.condition = j.at("condition").get<std::string>();
    r.n_stories = j.at("n_stories").get<int>();
    r.status = parse_condition_status(j.at("status").get<std::string>());
    r.tmc_detector = j.at("tmc_detector").get<std::string>();
    r.tmc_count = j.at("tmc_count").get<int>();
    r.tmc_rate = j.at("tmc_rate").get<double>();
    r.diversity_sample = j.at("diversity_sample").get<int>();
    r.embedder = j.at("embedder").get<std::string>();
    r.vendi = opt("vendi");
    r.lexical_diversity = opt("lexical_diversity");
    r.lexical_diversity_std = opt("lexical_diversity_std");
    r.mean_violations = j.at("mean_violations").get<double>();
    r.per_story_violations = j.at("per_story_violations").get<std::vector<int>>();
    r.per_story_tmc = j.at("per_story_tmc").get<std::vector<bool>>();
    return r;
  });
}

std::string corpus_to_jsonl(const std::vector<GenerationRecord> &records) {
  std::string out;
  for (const auto &r : records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

std::vector<GenerationRecord> read_corpus(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus '" + path.string() + "'");
  std::vector<GenerationRecord> out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception &e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError &e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

json read_json_file(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception &e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_file_atomic(const std::filesystem::path &path, const std::string &contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out << contents;
    if (!out) throw DataError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace nstm
