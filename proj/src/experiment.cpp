#include "nstm/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include <omp.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "nstm/errors.hpp"
#include "nstm/records.hpp"
#include "nstm/weights_io.hpp"

namespace nstm {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// config parsing

std::string trim(const std::string &s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string &where, const std::string &raw) {
  auto s = trim(raw);
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    throw DataError(where + ": cannot parse '" + raw + "' as a number");
  return v;
}

bool parse_bool(const std::string &where, const std::string &raw) {
  auto s = trim(raw);
  if (s == "true" || s == "yes" || s == "1") return true;
  if (s == "false" || s == "no" || s == "0") return false;
  throw DataError(where + ": expected true or false, got '" + raw + "'");
}

std::vector<int> parse_int_list(const std::string &where, const std::string &raw) {
  std::vector<int> out;
  std::stringstream ss(raw);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_number<int>(where, item));
  return out;
}

// A section's keys, with a check that nothing unknown is left over.
class Section {
 public:
  Section(std::string name, const pt::ptree *tree) : name_(std::move(name)), tree_(tree) {}

  std::optional<std::string> get(const std::string &key) {
    seen_.insert(key);
    if (!tree_) return std::nullopt;
    auto it = tree_->find(key);
    if (it == tree_->not_found()) return std::nullopt;
    return trim(it->second.data());
  }
  std::string where(const std::string &key) const { return "[" + name_ + "] " + key; }

  template <class T>
  std::optional<T> number(const std::string &key) {
    auto v = get(key);
    if (!v) return std::nullopt;
    return parse_number<T>(where(key), *v);
  }

  void finish() const {
    if (!tree_) return;
    for (const auto &[k, _] : *tree_)
      if (!seen_.count(k)) throw DataError("unknown key '" + k + "' in [" + name_ + "]");
  }

 private:
  std::string name_;
  const pt::ptree *tree_;
  std::set<std::string> seen_;
};

fs::path resolve(const fs::path &base, const std::string &p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

bool valid_name(const std::string &name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_' ||
           c == '.';
  }) && name[0] != '.';
}

// Section headers in file order. The ini reader drops sections without keys,
// and "[condition:baseline]" with every default is a legitimate one.
std::vector<std::string> section_headers(const fs::path &path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    auto b = line.find_first_not_of(" \t\r");
    auto e = line.find_last_not_of(" \t\r");
    if (b == std::string::npos || line[b] != '[' || line[e] != ']') continue;
    auto name = line.substr(b + 1, e - b - 1);
    auto nb = name.find_first_not_of(" \t"), ne = name.find_last_not_of(" \t");
    out.push_back(nb == std::string::npos ? "" : name.substr(nb, ne - nb + 1));
  }
  return out;
}

ConditionSpec parse_condition(const std::string &name, const pt::ptree &tree, int max_new_tokens) {
  Section s("condition:" + name, &tree);
  ConditionSpec c;
  c.name = name;
  c.sampling.max_new_tokens = s.number<int>("max_new_tokens").value_or(max_new_tokens);
  c.sampling.temperature = s.number<double>("temperature").value_or(1.0);
  c.sampling.top_k = s.number<int>("top_k");
  c.sampling.top_p = s.number<double>("top_p");
  if (auto site = s.get("site")) c.site = parse_noise_site(*site);
  if (auto sigma = s.get("sigma"); sigma && *sigma != "auto") c.sigma = parse_number<double>(s.where("sigma"), *sigma);
  if (auto layers = s.get("layers")) c.layers = parse_int_list(s.where("layers"), *layers);
  c.decay_horizon = s.number<int>("decay_horizon");
  if (auto d = s.get("aeni_decay")) c.aeni_decay = parse_bool(s.where("aeni_decay"), *d);
  c.noise_seed = s.number<std::uint64_t>("noise_seed");
  s.finish();
  if (!c.site && (c.sigma || !c.layers.empty() || c.decay_horizon || c.noise_seed))
    throw DataError("condition '" + name + "': noise keys given without a site");
  try {
    c.sampling.validate();
  } catch (const Error &e) {
    throw DataError("condition '" + name + "': " + e.what());
  }
  return c;
}

ConstraintRule parse_rule(const std::string &id, const pt::ptree &tree) {
  Section s("rule:" + id, &tree);
  ConstraintRule r;
  r.id = id;
  auto kind = s.get("kind");
  if (!kind) throw DataError("rule '" + id + "' has no kind");
  r.kind = parse_constraint_kind(*kind);
  r.limit = s.number<int>("limit").value_or(r.limit);
  r.count = s.number<int>("count").value_or(r.count);
  r.tag = s.get("tag").value_or("");
  r.min_count = s.number<int>("min").value_or(r.min_count);
  r.max_count = s.number<int>("max").value_or(r.max_count);
  s.finish();
  if (r.kind != ConstraintKind::MaxWordCount && r.tag.empty()) throw DataError("rule '" + id + "' needs a tag");
  return r;
}

// ---------------------------------------------------------------------------
// formatting

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string fixed(const std::optional<double> &v, int digits, const char *missing = "NA") {
  return v ? fixed(*v, digits) : std::string(missing);
}

std::string pretty(const json &j) { return j.dump(2) + "\n"; }

const char *to_string(Direction d) { return d == Direction::HigherIsBetter ? "higher-is-better" : "lower-is-better"; }

// ---------------------------------------------------------------------------
// stage helpers

struct LoadedModel {
  Model model;
  Vocab vocab;
  TokenId stop;
};

LoadedModel load_model_and_vocab(const ExperimentConfig &cfg) {
  Model model = load_model(cfg.model_path);
  Vocab vocab = Vocab::load(cfg.vocab_path);
  if (vocab.size() != static_cast<std::size_t>(model.config().vocab_size))
    throw DataError("vocabulary has " + std::to_string(vocab.size()) + " words but the model expects " +
                    std::to_string(model.config().vocab_size));
  auto stop = vocab.find(cfg.stop_word);
  if (!stop) throw DataError("stop word '" + cfg.stop_word + "' is not in the vocabulary");
  return {std::move(model), std::move(vocab), *stop};
}

std::vector<TokenId> load_prompt(const ExperimentConfig &cfg, const Vocab &vocab) {
  auto seqs = load_id_sequences(cfg.prompt_path);
  if (seqs.size() != 1) throw DataError("prompt file must hold exactly one id sequence: " + cfg.prompt_path.string());
  auto sidecar = cfg.prompt_path;
  sidecar.replace_extension(".txt");
  if (fs::exists(sidecar)) {
    std::ifstream in(sidecar);
    std::stringstream ss;
    ss << in.rdbuf();
    if (vocab.encode(ss.str()) != seqs[0])
      throw DataError("prompt ids do not match the text sidecar " + sidecar.string());
  }
  return seqs[0];
}

std::optional<CalibrationReport> load_calibration_if_present(const ExperimentConfig &cfg) {
  auto path = calibration_file(cfg);
  if (!fs::exists(path)) return std::nullopt;
  return calibration_from_json(read_json_file(path));
}

std::vector<ConditionReport> load_reports(const ExperimentConfig &cfg) {
  std::vector<std::string> missing;
  for (const auto &c : cfg.conditions)
    if (!fs::exists(report_file(cfg, c.name))) missing.push_back(c.name);
  if (!missing.empty()) {
    std::string list;
    for (const auto &m : missing) list += (list.empty() ? "" : ", ") + m;
    throw DataError("missing condition reports (run evaluate): " + list);
  }
  std::vector<ConditionReport> out;
  for (const auto &c : cfg.conditions) out.push_back(condition_report_from_json(read_json_file(report_file(cfg, c.name))));
  return out;
}

// condition -> story_index -> value
std::map<std::string, std::map<int, double>> read_column_csv(const fs::path &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open column file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || trim(line) != "condition,story_index,value")
    throw DataError(path.string() + ": header must be 'condition,story_index,value'");
  std::map<std::string, std::map<int, double>> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(trim(cell));
    auto where = path.string() + ":" + std::to_string(lineno);
    if (cells.size() != 3) throw DataError(where + ": expected 3 fields");
    int idx = parse_number<int>(where, cells[1]);
    double v = parse_number<double>(where, cells[2]);
    if (!std::isfinite(v)) throw DataError(where + ": non-finite value");
    if (!out[cells[0]].emplace(idx, v).second) throw DataError(where + ": duplicate entry");
  }
  return out;
}

double group_mean(const std::vector<double> &v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

// ---------------------------------------------------------------------------

const ConditionSpec &ExperimentConfig::condition(const std::string &name) const {
  for (const auto &c : conditions)
    if (c.name == name) return c;
  throw UsageError("unknown condition '" + name + "'");
}

std::vector<ConditionSpec> default_conditions(int max_new_tokens) {
  auto base = [&](std::string name) {
    ConditionSpec c;
    c.name = std::move(name);
    c.sampling.max_new_tokens = max_new_tokens;
    return c;
  };
  std::vector<ConditionSpec> out;
  out.push_back(base("baseline"));
  auto k = base("HiTemp-k");
  k.sampling.temperature = 1.8;
  k.sampling.top_k = 40;
  out.push_back(k);
  auto p = base("HiTemp-p");
  p.sampling.temperature = 1.8;
  p.sampling.top_p = 0.9;
  out.push_back(p);
  const std::pair<const char *, NoiseSite> noisy[] = {{"Embed", NoiseSite::Embedding},
                                                      {"Attn", NoiseSite::AttentionOutput},
                                                      {"AENI", NoiseSite::Aeni},
                                                      {"L-Res", NoiseSite::ResidualStream}};
  for (const auto &[name, site] : noisy) {
    auto c = base(name);
    c.site = site;
    out.push_back(c);
  }
  return out;
}

ExperimentConfig load_experiment_config(const fs::path &path, const std::optional<fs::path> &out_override) {
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error &e) {
    throw DataError(std::string("config: ") + e.what());
  }
  ExperimentConfig cfg;
  cfg.config_path = path;
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");

  auto section = [&](const std::string &name) -> const pt::ptree * {
    auto it = tree.find(name);
    return it == tree.not_found() ? nullptr : &it->second;
  };

  // Top-level keys sit directly in the root with no children of their own.
  std::optional<int> schema;
  for (const auto &[key, child] : tree) {
    if (!child.empty() || child.data().empty()) continue;
    if (key == "schema")
      schema = parse_number<int>("schema", child.data());
    else
      throw DataError("unknown top-level key '" + key + "'");
  }
  if (!schema) throw DataError("config: missing 'schema'");
  if (*schema != kConfigSchema) throw DataError("config: unsupported schema " + std::to_string(*schema));

  {
    Section s("model", section("model"));
    auto p = s.get("path");
    if (!p) throw DataError("config: [model] path is required");
    cfg.model_path = resolve(base, *p);
    auto v = s.get("vocab");
    if (!v) throw DataError("config: [model] vocab is required");
    cfg.vocab_path = resolve(base, *v);
    cfg.stop_word = s.get("stop").value_or(cfg.stop_word);
    s.finish();
  }
  {
    Section s("calibration", section("calibration"));
    auto p = s.get("prompts");
    if (!p) throw DataError("config: [calibration] prompts is required");
    cfg.calibration_prompts_path = resolve(base, *p);
    cfg.calibration.alpha = s.number<double>("alpha").value_or(cfg.calibration.alpha);
    cfg.calibration.steps_per_prompt = s.number<int>("steps_per_prompt").value_or(cfg.calibration.steps_per_prompt);
    cfg.calibration.prompt_set_id = s.get("prompt_set_id").value_or(cfg.calibration_prompts_path.stem().string());
    if (auto r = s.get("reduction")) {
      if (*r == "elementwise")
        cfg.calibration.elementwise_rms = true;
      else if (*r != "mean-then-square")
        throw DataError(s.where("reduction") + ": expected mean-then-square or elementwise");
    }
    s.finish();
  }
  {
    Section s("generation", section("generation"));
    auto p = s.get("prompt");
    if (!p) throw DataError("config: [generation] prompt is required");
    cfg.prompt_path = resolve(base, *p);
    cfg.n_stories = s.number<int>("n_stories").value_or(cfg.n_stories);
    cfg.base_seed = s.number<std::uint64_t>("base_seed").value_or(cfg.base_seed);
    if (auto seeds = s.get("seeds")) cfg.seeds_path = resolve(base, *seeds);
    cfg.noise_seed = s.number<std::uint64_t>("noise_seed").value_or(cfg.noise_seed);
    cfg.max_new_tokens = s.number<int>("max_new_tokens").value_or(cfg.max_new_tokens);
    s.finish();
    if (cfg.n_stories < 2) throw DataError("config: n_stories must be >= 2");
    if (cfg.max_new_tokens < 0) throw DataError("config: max_new_tokens must be >= 0");
  }
  {
    Section s("metrics", section("metrics"));
    auto lex = s.get("lexicon");
    if (!lex) throw DataError("config: [metrics] lexicon is required");
    cfg.lexicon_path = resolve(base, *lex);
    auto embedder = s.get("embedder").value_or("hashed");
    auto emb_path = s.get("embeddings");
    if (embedder == "precomputed") {
      if (!emb_path) throw DataError("config: embedder = precomputed needs [metrics] embeddings");
      cfg.embeddings_path = resolve(base, *emb_path);
    } else if (embedder != "hashed") {
      throw DataError("config: unknown embedder '" + embedder + "'");
    } else if (emb_path) {
      throw DataError("config: [metrics] embeddings given but embedder is hashed");
    }
    cfg.embedding_dim = s.number<std::size_t>("embedding_dim").value_or(cfg.embedding_dim);
    if (cfg.embedding_dim == 0) throw DataError("config: embedding_dim must be > 0");
    cfg.metrics.tmc.min_type_token_ratio = s.number<double>("tmc_min_ttr").value_or(cfg.metrics.tmc.min_type_token_ratio);
    cfg.metrics.tmc.window = s.number<int>("tmc_window").value_or(cfg.metrics.tmc.window);
    cfg.metrics.tmc.repeats = s.number<int>("tmc_repeats").value_or(cfg.metrics.tmc.repeats);
    if (cfg.metrics.tmc.window < 1 || cfg.metrics.tmc.repeats < 2)
      throw DataError("config: tmc_window must be >= 1 and tmc_repeats >= 2");
    if (auto c = s.get("levene_center")) {
      if (*c == "median")
        cfg.levene_center = LeveneCenter::Median;
      else if (*c != "mean")
        throw DataError(s.where("levene_center") + ": expected mean or median");
    }
    s.finish();
  }
  {
    Section s("output", section("output"));
    cfg.output_dir = resolve(base, s.get("dir").value_or("out"));
    s.finish();
  }
  if (const char *env = std::getenv(kOutEnvVar); env && *env) cfg.output_dir = env;
  if (out_override) cfg.output_dir = *out_override;

  std::vector<ConstraintRule> rules;
  std::set<std::string> names;
  const pt::ptree no_keys;
  for (const auto &key : section_headers(path)) {
    const pt::ptree *found = section(key);
    const pt::ptree &child = found ? *found : no_keys;
    auto colon = key.find(':');
    std::string kind = key.substr(0, colon);
    std::string name = colon == std::string::npos ? "" : key.substr(colon + 1);
    if (colon == std::string::npos) {
      static const std::set<std::string> known{"model", "calibration", "generation", "metrics", "output"};
      if (!known.count(key)) throw DataError("config: unknown section [" + key + "]");
      continue;
    }
    if (!valid_name(name)) throw DataError("config: bad name in section [" + key + "]");
    if (kind == "condition") {
      if (!names.insert(name).second) throw DataError("config: duplicate condition '" + name + "'");
      cfg.conditions.push_back(parse_condition(name, child, cfg.max_new_tokens));
    } else if (kind == "rule") {
      rules.push_back(parse_rule(name, child));
    } else if (kind == "column") {
      Section s(key, &child);
      auto p = s.get("path");
      if (!p) throw DataError("config: [" + key + "] path is required");
      CustomColumn col;
      col.path = resolve(base, *p);
      auto dir = s.get("direction").value_or("higher");
      if (dir == "lower")
        col.direction = Direction::LowerIsBetter;
      else if (dir != "higher")
        throw DataError(s.where("direction") + ": expected higher or lower");
      s.finish();
      if (name == "violations") throw DataError("config: column name 'violations' is reserved");
      cfg.columns[name] = col;
    } else {
      throw DataError("config: unknown section [" + key + "]");
    }
  }
  if (cfg.conditions.empty()) cfg.conditions = default_conditions(cfg.max_new_tokens);
  if (!rules.empty()) cfg.metrics.rules = rules;
  if (!names.empty() && !names.count(kBaselineName) && cfg.conditions.size() > 0)
    throw DataError("config: a condition named 'baseline' is required");
  return cfg;
}

Condition resolve_condition(const ConditionSpec &spec, const ModelConfig &model,
                            const std::optional<CalibrationReport> &calibration, std::uint64_t default_noise_seed) {
  Condition c;
  c.name = spec.name;
  c.sampling = spec.sampling;
  if (!spec.site) return c;
  NoiseSpec n;
  n.site = *spec.site;
  if (spec.sigma) {
    n.base_sigma = *spec.sigma;
  } else {
    if (!calibration)
      throw DataError("condition '" + spec.name + "' uses a calibrated sigma but no calibration report exists (run calibrate)");
    switch (n.site) {
      case NoiseSite::Embedding: n.base_sigma = calibration->sigma_emb; break;
      case NoiseSite::AttentionOutput: n.base_sigma = calibration->sigma_attn; break;
      case NoiseSite::ResidualStream: n.base_sigma = calibration->sigma_res; break;
      case NoiseSite::Aeni: n.base_sigma = calibration->sigma_aeni; break;
    }
  }
  n.layers = spec.layers;
  n.decay_horizon = spec.decay_horizon.value_or(std::max(1, spec.sampling.max_new_tokens));
  n.aeni_decay = spec.aeni_decay;
  n.seed = spec.noise_seed.value_or(default_noise_seed);
  n.validate(model);
  c.noise = n;
  return c;
}

std::vector<std::uint64_t> experiment_seeds(const ExperimentConfig &cfg) {
  if (!cfg.seeds_path) return story_seeds(cfg.base_seed, static_cast<std::size_t>(cfg.n_stories));
  std::ifstream in(*cfg.seeds_path);
  if (!in) throw DataError("cannot open seed list '" + cfg.seeds_path->string() + "'");
  std::vector<std::uint64_t> seeds;
  for (std::string tok; in >> tok;) seeds.push_back(parse_number<std::uint64_t>(cfg.seeds_path->string(), tok));
  if (seeds.size() != static_cast<std::size_t>(cfg.n_stories))
    throw DataError("seed list has " + std::to_string(seeds.size()) + " entries, n_stories is " +
                    std::to_string(cfg.n_stories));
  return seeds;
}

fs::path calibration_file(const ExperimentConfig &cfg) { return cfg.output_dir / "calibration.json"; }
fs::path corpus_file(const ExperimentConfig &cfg, const std::string &c) { return cfg.output_dir / "corpus" / (c + ".jsonl"); }
fs::path report_file(const ExperimentConfig &cfg, const std::string &c) { return cfg.output_dir / "reports" / (c + ".json"); }
fs::path stats_file(const ExperimentConfig &cfg, const std::string &m) { return cfg.output_dir / "stats" / (m + ".json"); }

// ---------------------------------------------------------------------------
// stages

CalibrationReport cmd_calibrate(const ExperimentConfig &cfg, std::ostream &log) {
  Model model = load_model(cfg.model_path);
  auto prompts = load_id_sequences(cfg.calibration_prompts_path);
  auto report = calibrate(model, prompts, cfg.calibration);
  write_file_atomic(calibration_file(cfg), pretty(to_json(report)));
  log << "calibrated on " << prompts.size() << " prompts (" << report.decode_steps_collected
      << " decode steps): median RMS " << report.median_rms << ", alpha " << report.alpha << ", sigma_res "
      << report.sigma_res << "\n";
  return report;
}

void cmd_generate(const ExperimentConfig &cfg, const std::optional<std::string> &only, int workers, std::ostream &log) {
  std::vector<const ConditionSpec *> selected;
  if (only)
    selected.push_back(&cfg.condition(*only));
  else
    for (const auto &c : cfg.conditions) selected.push_back(&c);

  auto loaded = load_model_and_vocab(cfg);
  auto prompt = load_prompt(cfg, loaded.vocab);
  auto seeds = experiment_seeds(cfg);
  bool needs_calibration = std::any_of(selected.begin(), selected.end(), [](const ConditionSpec *c) { return c->site && !c->sigma; });
  std::optional<CalibrationReport> calibration;
  if (needs_calibration) {
    calibration = load_calibration_if_present(cfg);
    if (!calibration) throw DataError("no calibration report at " + calibration_file(cfg).string() + " (run calibrate)");
  }
  // Resolve everything before writing anything.
  std::vector<Condition> conditions;
  for (const auto *spec : selected) {
    auto c = resolve_condition(*spec, loaded.model.config(), calibration, cfg.noise_seed);
    c.sampling.stop_token = loaded.stop;
    conditions.push_back(std::move(c));
  }
  for (const auto &c : conditions) {
    auto records = run_condition(loaded.model, &loaded.vocab, prompt, c, seeds, workers);
    write_file_atomic(corpus_file(cfg, c.name), corpus_to_jsonl(records));
    log << c.name << ": " << records.size() << " stories";
    if (c.noise) log << " (" << to_string(c.noise->site) << ", sigma " << c.noise->base_sigma << ")";
    log << "\n";
  }
}

void cmd_evaluate(const ExperimentConfig &cfg, int workers, std::ostream &log) {
  std::vector<std::string> missing;
  for (const auto &c : cfg.conditions)
    if (!fs::exists(corpus_file(cfg, c.name))) missing.push_back(c.name);
  if (!missing.empty()) {
    std::string list;
    for (const auto &m : missing) list += (list.empty() ? "" : ", ") + m;
    throw DataError("missing corpora for: " + list);
  }
  Lexicon lexicon = Lexicon::load(cfg.lexicon_path);
  std::unique_ptr<EmbeddingProvider> embedder;
  if (cfg.embeddings_path)
    embedder = std::make_unique<PrecomputedEmbeddings>(PrecomputedEmbeddings::load(*cfg.embeddings_path));
  else
    embedder = std::make_unique<HashedNgramEmbedder>(cfg.embedding_dim);

  std::vector<std::vector<GenerationRecord>> corpora;
  for (const auto &c : cfg.conditions) {
    auto records = read_corpus(corpus_file(cfg, c.name));
    if (records.size() != static_cast<std::size_t>(cfg.n_stories))
      throw DataError("corpus '" + c.name + "' has " + std::to_string(records.size()) + " records, expected " +
                      std::to_string(cfg.n_stories));
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].condition != c.name || records[i].story_index != static_cast<int>(i))
        throw DataError("corpus '" + c.name + "' is out of order or mislabeled at line " + std::to_string(i + 1));
    corpora.push_back(std::move(records));
  }

  const int n = static_cast<int>(corpora.size());
  std::vector<ConditionReport> reports(corpora.size());
  std::vector<std::exception_ptr> errors(corpora.size());
  const int threads = workers > 0 ? workers : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (int i = 0; i < n; ++i) {
    try {
      reports[i] = condition_report(corpora[i], cfg.metrics, lexicon, *embedder);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto &e : errors)
    if (e) std::rethrow_exception(e);

  std::string md = "# Collapse summary (heuristic-TMC)\n\n| condition | collapsed | collapse % | status |\n|---|---:|---:|---|\n";
  std::string csv = "condition,tmc_count,n_stories,tmc_rate,status\n";
  for (const auto &r : reports) {
    write_file_atomic(report_file(cfg, r.condition), pretty(to_json(r)));
    md += "| " + r.condition + " | " + std::to_string(r.tmc_count) + "/" + std::to_string(r.n_stories) + " | " +
          fixed(100.0 * r.tmc_rate, 1) + " | " + to_string(r.status) + " |\n";
    csv += r.condition + "," + std::to_string(r.tmc_count) + "," + std::to_string(r.n_stories) + "," +
           fixed(r.tmc_rate, 6) + "," + to_string(r.status) + "\n";
    log << r.condition << ": vendi " << fixed(r.vendi, 4) << ", tmc " << r.tmc_count << "/" << r.n_stories << " ("
        << to_string(r.status) << ")\n";
  }
  md += "\nDetector: heuristic-TMC (type-token ratio < " + fixed(cfg.metrics.tmc.min_type_token_ratio, 2) +
        ", or a " + std::to_string(cfg.metrics.tmc.window) + "-token window repeated " +
        std::to_string(cfg.metrics.tmc.repeats) +
        " times). Excluded: collapse rate >= 40%. Figure-excluded: collapse rate > 20%.\n";
  write_file_atomic(cfg.output_dir / "reports" / "tmc_summary.md", md);
  write_file_atomic(cfg.output_dir / "reports" / "tmc_summary.csv", csv);
}

json stats_report(const std::string &metric, Direction direction, const std::string &model_id,
                  const std::vector<SampleGroup> &groups, const std::vector<std::string> &excluded,
                  LeveneCenter center) {
  json out{{"schema", kStatsSchema},
           {"metric", metric},
           {"model", model_id},
           {"direction", to_string(direction)},
           {"excluded", excluded},
           {"omnibus", nullptr},
           {"levene", nullptr},
           {"pairwise_licensed", false},
           {"pairwise", json::array()},
           {"notes", json::array()}};
  json gj = json::array();
  for (const auto &g : groups) {
    gj.push_back({{"label", g.label}, {"n", g.values.size()}, {"mean", group_mean(g.values)}, {"median", median(g.values)}});
  }
  out["groups"] = gj;
  if (groups.size() < 2) {
    out["status"] = "no-test";
    out["notes"].push_back("fewer than 2 eligible conditions");
    return out;
  }
  out["status"] = "ok";

  auto kw = kruskal_wallis(groups);
  out["omnibus"] = {{"test", "kruskal-wallis"}, {"H", kw.H},
                    {"df", kw.df},          {"p", kw.p},
                    {"tie_correction", kw.tie_correction}, {"tie_corrected", kw.tie_corrected},
                    {"degenerate", kw.degenerate}, {"stars", significance_stars(kw.p)}};
  bool levene_ok = std::all_of(groups.begin(), groups.end(), [](const SampleGroup &g) { return g.values.size() >= 2; });
  if (levene_ok) {
    auto lv = levene(groups, center);
    out["levene"] = {{"center", to_string(lv.center)}, {"W", lv.W}, {"df1", lv.df1}, {"df2", lv.df2},
                     {"p", lv.p}, {"degenerate", lv.degenerate}};
  } else {
    out["notes"].push_back("Levene's test skipped: a group has fewer than 2 values");
  }

  std::optional<std::size_t> ref;
  for (std::size_t i = 0; i < groups.size(); ++i)
    if (groups[i].label == kBaselineName) ref = i;
  if (!ref) {
    out["notes"].push_back("no eligible baseline condition; pairwise comparisons skipped");
    return out;
  }
  bool licensed = !kw.degenerate && kw.p < 0.05;
  out["pairwise_licensed"] = licensed;
  if (licensed) {
    for (const auto &r : dunn_posthoc(groups, ref, direction)) {
      out["pairwise"].push_back({{"method", r.a}, {"baseline", r.b}, {"z", r.z}, {"p_raw", r.p_raw},
                                 {"p_holm", r.p_holm}, {"r", r.r}, {"effect", to_string(r.effect)},
                                 {"stars", significance_stars(r.p_holm)}});
    }
  } else {
    out["notes"].push_back("omnibus not significant: pairwise tests not licensed");
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (i == *ref) continue;
      double r = rank_biserial(groups[i].values, groups[*ref].values, direction);
      out["pairwise"].push_back({{"method", groups[i].label}, {"baseline", kBaselineName}, {"z", nullptr},
                                 {"p_raw", nullptr}, {"p_holm", nullptr}, {"r", r},
                                 {"effect", to_string(effect_label(r))}, {"stars", ""}});
    }
  }
  return out;
}

void cmd_stats(const ExperimentConfig &cfg, const std::string &metric, std::ostream &log) {
  Direction direction = Direction::LowerIsBetter;
  std::optional<std::map<std::string, std::map<int, double>>> column;
  if (metric != "violations") {
    auto it = cfg.columns.find(metric);
    if (it == cfg.columns.end()) throw UsageError("unknown metric '" + metric + "' (violations or a configured column)");
    direction = it->second.direction;
    column = read_column_csv(it->second.path);
  }
  auto reports = load_reports(cfg);
  std::vector<SampleGroup> groups;
  std::vector<std::string> excluded;
  for (const auto &r : reports) {
    if (r.status == ConditionStatus::Excluded) {
      excluded.push_back(r.condition);
      continue;
    }
    SampleGroup g{r.condition, {}};
    if (!column) {
      for (int v : r.per_story_violations) g.values.push_back(v);
    } else {
      auto c = column->find(r.condition);
      if (c == column->end()) throw DataError("column '" + metric + "' has no values for '" + r.condition + "'");
      for (int i = 0; i < r.n_stories; ++i) {
        auto v = c->second.find(i);
        if (v == c->second.end())
          throw DataError("column '" + metric + "' misses story " + std::to_string(i) + " of '" + r.condition + "'");
        g.values.push_back(v->second);
      }
    }
    groups.push_back(std::move(g));
  }
  auto out = stats_report(metric, direction, cfg.model_id(), groups, excluded, cfg.levene_center);
  write_file_atomic(stats_file(cfg, metric), pretty(out));
  if (out["status"] == "no-test") {
    log << metric << ": no test (" << groups.size() << " eligible conditions)\n";
    return;
  }
  log << metric << ": H = " << out["omnibus"]["H"].get<double>() << ", p = " << out["omnibus"]["p"].get<double>()
      << (out["pairwise_licensed"].get<bool>() ? "" : " (pairwise not licensed)") << "\n";
}

namespace {

std::string stats_section(const json &s) {
  std::string md = "## Statistics: " + s["metric"].get<std::string>() + " (" + s["direction"].get<std::string>() + ")\n\n";
  if (!s["excluded"].empty()) {
    md += "Dropped (>= 40% collapse):";
    for (const auto &e : s["excluded"]) md += " " + e.get<std::string>();
    md += "\n\n";
  }
  if (s["status"] == "no-test") return md + "No test: fewer than 2 eligible conditions.\n\n";
  const auto &o = s["omnibus"];
  md += "Kruskal-Wallis: H = " + fixed(o["H"].get<double>(), 3) + ", df = " + std::to_string(o["df"].get<int>()) +
        ", p = " + fixed(o["p"].get<double>(), 4) + " " + o["stars"].get<std::string>() + "\n\n";
  if (!s["levene"].is_null()) {
    const auto &l = s["levene"];
    md += "Levene (" + l["center"].get<std::string>() + "): W = " + fixed(l["W"].get<double>(), 3) + ", p = " +
          fixed(l["p"].get<double>(), 4) + "\n\n";
  }
  if (s["pairwise"].empty()) {
    for (const auto &n : s["notes"]) md += "- " + n.get<std::string>() + "\n";
    return md + "\n";
  }
  bool licensed = s["pairwise_licensed"].get<bool>();
  if (!licensed) md += "Pairwise tests not licensed (omnibus not significant); effect sizes shown for reference.\n\n";
  md += "| method vs baseline | r | effect | z | p (Holm) | sig |\n|---|---:|---|---:|---:|---|\n";
  for (const auto &r : s["pairwise"]) {
    md += "| " + r["method"].get<std::string>() + " | " + fixed(r["r"].get<double>(), 3) + " | " +
          r["effect"].get<std::string>() + " | " + (licensed ? fixed(r["z"].get<double>(), 3) : "NA") + " | " +
          (licensed ? fixed(r["p_holm"].get<double>(), 4) : "NA") + " | " + r["stars"].get<std::string>() + " |\n";
  }
  return md + "\nr > 0 means the method is better than baseline.\n\n";
}

}  // namespace

void cmd_report(const ExperimentConfig &cfg, std::ostream &log) {
  auto reports = load_reports(cfg);
  std::vector<json> stats;
  auto primary = stats_file(cfg, "violations");
  if (!fs::exists(primary)) throw DataError("missing " + primary.string() + " (run stats)");
  stats.push_back(read_json_file(primary));
  for (const auto &[name, _] : cfg.columns)
    if (fs::exists(stats_file(cfg, name))) stats.push_back(read_json_file(stats_file(cfg, name)));
  auto calibration = load_calibration_if_present(cfg);

  std::string md = "# Noise steering experiment: " + cfg.model_id() + "\n\n";
  md += std::to_string(cfg.conditions.size()) + " conditions, " + std::to_string(cfg.n_stories) +
        " stories each, story seeds shared across conditions.\n\n";
  md += "## Calibration\n\n";
  if (calibration) {
    md += "alpha = " + fixed(calibration->alpha, 3) + ", median block-output RMS = " + fixed(calibration->median_rms, 6) +
          ", sigma_res = " + fixed(calibration->sigma_res, 6) + " (" + std::to_string(calibration->decode_steps_collected) +
          " decode steps, prompt set " + calibration->prompt_set_id + ")\n\n| layer | RMS |\n|---:|---:|\n";
    for (const auto &[l, v] : calibration->per_layer_rms) md += "| " + std::to_string(l) + " | " + fixed(v, 6) + " |\n";
    md += "\n";
  } else {
    md += "No calibration report; every noise condition used an explicit sigma.\n\n";
  }
  md += "## Collapse (heuristic-TMC)\n\n| condition | collapse % | status |\n|---|---:|---|\n";
  for (const auto &r : reports)
    md += "| " + r.condition + " | " + fixed(100.0 * r.tmc_rate, 1) + " | " + to_string(r.status) + " |\n";
  md += "\n## Diversity and constraints\n\nDiversity is computed over non-collapsed stories (embedder: " +
        (reports.empty() ? std::string("none") : reports.front().embedder) + ").\n\n";
  md += "| condition | n used | Vendi | Self-BLEU diversity | mean violations |\n|---|---:|---:|---|---:|\n";
  std::string csv = "condition,vendi,lex_div,tmc_rate,mean_violations\n";
  for (const auto &r : reports) {
    std::string lex = r.lexical_diversity ? fixed(*r.lexical_diversity, 4) + " ± " + fixed(r.lexical_diversity_std, 4)
                                          : std::string("NA");
    md += "| " + r.condition + " | " + std::to_string(r.diversity_sample) + " | " + fixed(r.vendi, 4) + " | " + lex +
          " | " + fixed(r.mean_violations, 3) + " |\n";
    csv += r.condition + "," + fixed(r.vendi, 6) + "," + fixed(r.lexical_diversity, 6) + "," + fixed(r.tmc_rate, 6) +
           "," + fixed(r.mean_violations, 6) + "\n";
  }
  md += "\nConditions with collapse above 20% belong out of the diversity-vs-violations figure; summary.csv keeps "
        "every row and the status column above says which.\n\n";
  for (const auto &s : stats) md += stats_section(s);
  write_file_atomic(cfg.output_dir / "report.md", md);
  write_file_atomic(cfg.output_dir / "summary.csv", csv);
  log << "wrote " << (cfg.output_dir / "report.md").string() << " and summary.csv\n";
}

}  // namespace nstm
