#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <cstring>
#include <limits>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nstm/errors.hpp"
#include "nstm/experiment.hpp"
#include "nstm/records.hpp"
#include "nstm/synth.hpp"
#include "nstm/weights_io.hpp"

using namespace nstm;
namespace fs = std::filesystem;

namespace {

const char *kBody = R"(schema = 1

[model]
path = model.nstm
vocab = vocab.txt

[calibration]
prompts = calibration_prompts.ids
steps_per_prompt = 8

[generation]
prompt = prompt.ids
n_stories = 6
base_seed = 11
noise_seed = 5
max_new_tokens = 20

[metrics]
lexicon = lexicon.tsv
embedding_dim = 128
)";

const char *kConditions = R"(
[condition:baseline]

[condition:HiTemp-k]
temperature = 1.8
top_k = 40

[condition:L-Res]
site = residual
sigma = auto
)";

// A scratch experiment directory with the fixture inputs and a saved model.
struct Workspace {
  fs::path dir;

  explicit Workspace(const std::string &name, bool with_model = true) {
    dir = fs::temp_directory_path() / ("nstm_exp_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    for (const char *f : {"vocab.txt", "lexicon.tsv", "prompt.ids", "prompt.txt", "calibration_prompts.ids"})
      fs::copy_file(fs::path(NSTM_FIXTURES) / f, dir / f);
    if (with_model) save_model(dir / "model.nstm", make_synthetic_model(fixture_synth_options(1)));
  }
  ~Workspace() { fs::remove_all(dir); }

  fs::path write(const std::string &text, const std::string &name = "exp.ini") const {
    std::ofstream(dir / name) << text;
    return dir / name;
  }
};

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> tree(const fs::path &root) {
  std::map<std::string, std::string> out;
  for (const auto &e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

int run_cli(const std::string &args) {
  const std::string cmd = std::string(NSTM_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void run_all(const ExperimentConfig &cfg, int workers) {
  std::ostringstream log;
  cmd_calibrate(cfg, log);
  cmd_generate(cfg, std::nullopt, workers, log);
  cmd_evaluate(cfg, workers, log);
  cmd_stats(cfg, "violations", log);
  cmd_report(cfg, log);
}

template <class F>
std::string error_text(F &&f) {
  try {
    f();
  } catch (const Error &e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config parsing") {
  Workspace ws("parse", false);
  auto cfg = load_experiment_config(ws.write(std::string(kBody) + kConditions));
  CHECK(cfg.model_path == ws.dir / "model.nstm");
  CHECK(cfg.n_stories == 6);
  CHECK(cfg.max_new_tokens == 20);
  CHECK(cfg.calibration.alpha == 0.175);
  CHECK(cfg.calibration.steps_per_prompt == 8);
  CHECK(cfg.embedding_dim == 128);
  CHECK(cfg.output_dir == ws.dir / "out");
  CHECK(cfg.model_id() == "model");
  REQUIRE(cfg.conditions.size() == 3);
  CHECK(cfg.conditions[1].sampling.temperature == 1.8);
  CHECK(cfg.conditions[1].sampling.top_k == 40);
  CHECK(cfg.conditions[2].site == NoiseSite::ResidualStream);
  CHECK_FALSE(cfg.conditions[2].sigma.has_value());
  CHECK_THROWS_AS(cfg.condition("nope"), UsageError);

  auto seven = load_experiment_config(ws.write(kBody, "seven.ini"));
  std::vector<std::string> names;
  for (const auto &c : seven.conditions) names.push_back(c.name);
  CHECK(names == std::vector<std::string>{"baseline", "HiTemp-k", "HiTemp-p", "Embed", "Attn", "AENI", "L-Res"});

  CHECK(load_experiment_config(ws.write(kBody), fs::path("/tmp/elsewhere")).output_dir == "/tmp/elsewhere");
  setenv(kOutEnvVar, "/tmp/from_env", 1);
  CHECK(load_experiment_config(ws.write(kBody)).output_dir == "/tmp/from_env");
  CHECK(load_experiment_config(ws.write(kBody), fs::path("/tmp/flag")).output_dir == "/tmp/flag");
  unsetenv(kOutEnvVar);

  struct Bad { std::string text, needle; };
  for (const auto &b : {Bad{std::string(kBody) + "[generation2]\nx = 1\n", "generation2"},
                        Bad{std::string(kBody) + "[condition:baseline]\ncolour = red\n", "colour"},
                        Bad{std::string(kBody) + "[condition:x]\ntemperature = 1\n", "baseline"},
                        Bad{std::string(kBody) + "[condition:baseline]\ntemperature = hot\n", "temperature"},
                        Bad{std::string(kBody) + "[condition:baseline]\nsite = elbow\n", "elbow"},
                        Bad{"schema = 2\n" + std::string(kBody).substr(11), "schema"}}) {
    auto msg = error_text([&] { load_experiment_config(ws.write(b.text, "bad.ini")); });
    CHECK_MESSAGE(msg.find(b.needle) != std::string::npos, msg);
  }
  CHECK_THROWS_AS(load_experiment_config(ws.dir / "missing.ini"), DataError);
}

TEST_CASE("condition resolution") {
  ModelConfig mc;
  ConditionSpec spec;
  spec.name = "L-Res";
  spec.site = NoiseSite::ResidualStream;
  spec.sampling.max_new_tokens = 30;
  CHECK_THROWS_AS(resolve_condition(spec, mc, std::nullopt, 9), DataError);

  CalibrationReport cal;
  cal.sigma_res = 0.5;
  cal.sigma_emb = 0.25;
  auto c = resolve_condition(spec, mc, cal, 9);
  REQUIRE(c.noise.has_value());
  CHECK(c.noise->base_sigma == 0.5);
  CHECK(c.noise->decay_horizon == 30);
  CHECK(c.noise->seed == 9);

  spec.site = NoiseSite::Embedding;
  spec.sigma = 0.75;
  spec.noise_seed = 4;
  spec.decay_horizon = 7;
  c = resolve_condition(spec, mc, std::nullopt, 9);
  CHECK(c.noise->base_sigma == 0.75);
  CHECK(c.noise->seed == 4);
  CHECK(c.noise->decay_horizon == 7);

  ConditionSpec plain;
  plain.name = "baseline";
  CHECK_FALSE(resolve_condition(plain, mc, std::nullopt, 9).noise.has_value());
}

TEST_CASE("pipeline stages and artifacts") {
  Workspace ws("stages");
  auto cfg = load_experiment_config(ws.write(std::string(kBody) + kConditions));
  std::ostringstream log;

  // Auto sigma needs the calibration artifact first.
  CHECK_THROWS_AS(cmd_generate(cfg, std::nullopt, 1, log), DataError);
  CHECK_FALSE(fs::exists(corpus_file(cfg, "baseline")));
  CHECK_THROWS_AS(cmd_generate(cfg, std::string("nope"), 1, log), UsageError);
  CHECK_THROWS_AS(cmd_evaluate(cfg, 1, log), DataError);

  auto cal = cmd_calibrate(cfg, log);
  CHECK(cal.alpha == 0.175);
  CHECK(cal.sigma_res == doctest::Approx(0.175 * cal.median_rms).epsilon(1e-12));
  CHECK(calibration_from_json(read_json_file(calibration_file(cfg))) == cal);

  cmd_generate(cfg, std::string("L-Res"), 1, log);
  CHECK(fs::exists(corpus_file(cfg, "L-Res")));
  CHECK_FALSE(fs::exists(corpus_file(cfg, "baseline")));
  cmd_generate(cfg, std::nullopt, 2, log);

  auto base = read_corpus(corpus_file(cfg, "baseline"));
  auto lres = read_corpus(corpus_file(cfg, "L-Res"));
  auto hik = read_corpus(corpus_file(cfg, "HiTemp-k"));
  REQUIRE(base.size() == 6);
  REQUIRE(lres.size() == 6);
  for (int i = 0; i < 6; ++i) {
    CHECK(base[i].seed == lres[i].seed);
    CHECK(base[i].seed == hik[i].seed);
    CHECK(base[i].noise_trace.empty());
    CHECK(hik[i].sampling.temperature == 1.8);
    CHECK(hik[i].sampling.top_k == 40);
    REQUIRE(lres[i].noise.has_value());
    CHECK(lres[i].noise->base_sigma == cal.sigma_res);
    for (const auto &e : lres[i].noise_trace) {
      CHECK(e.site == NoiseSite::ResidualStream);
      CHECK((e.layer == 1 || e.layer == 2));
    }
  }
  CHECK_FALSE(lres[0].noise_trace.empty());

  cmd_evaluate(cfg, 2, log);
  for (const char *c : {"baseline", "HiTemp-k", "L-Res"}) {
    auto rep = condition_report_from_json(read_json_file(report_file(cfg, c)));
    CHECK(rep.condition == c);
    CHECK(rep.n_stories == 6);
  }
  CHECK(fs::exists(cfg.output_dir / "reports" / "tmc_summary.md"));
  CHECK(fs::exists(cfg.output_dir / "reports" / "tmc_summary.csv"));

  cmd_stats(cfg, "violations", log);
  auto st = read_json_file(stats_file(cfg, "violations"));
  CHECK(st.at("metric") == "violations");
  CHECK(st.at("direction") == "lower-is-better");
  CHECK(st.at("model") == "model");
  CHECK_THROWS_AS(cmd_stats(cfg, "quality", log), UsageError);

  cmd_report(cfg, log);
  const auto report = slurp(cfg.output_dir / "report.md");
  CHECK(report.find("heuristic-TMC") != std::string::npos);
  CHECK(report.find("0.175") != std::string::npos);
  const auto csv = slurp(cfg.output_dir / "summary.csv");
  CHECK(csv.rfind("condition,vendi,lex_div,tmc_rate,mean_violations\n", 0) == 0);

  // A corpus with the wrong number of stories is rejected at evaluation.
  auto trimmed = base;
  trimmed.pop_back();
  write_file_atomic(corpus_file(cfg, "baseline"), corpus_to_jsonl(trimmed));
  CHECK_THROWS_AS(cmd_evaluate(cfg, 1, log), DataError);
}

TEST_CASE("custom columns feed the stats stage") {
  Workspace ws("columns");
  std::string text = std::string(kBody) + kConditions + "\n[column:judge]\npath = judge.csv\ndirection = higher\n";
  auto cfg = load_experiment_config(ws.write(text));
  std::ostringstream log;
  cmd_calibrate(cfg, log);
  cmd_generate(cfg, std::nullopt, 1, log);
  cmd_evaluate(cfg, 1, log);

  std::ofstream csv(ws.dir / "judge.csv");
  csv << "condition,story_index,value\n";
  for (const char *c : {"baseline", "HiTemp-k", "L-Res"})
    for (int i = 0; i < 6; ++i) csv << c << "," << i << "," << (std::string(c) == "L-Res" ? 10 + i : i) << "\n";
  csv.close();
  cmd_stats(cfg, "judge", log);
  auto st = read_json_file(stats_file(cfg, "judge"));
  CHECK(st.at("direction") == "higher-is-better");
  CHECK(st.at("status") == "ok");
  CHECK(st.at("omnibus").at("p").get<double>() < 0.05);
  CHECK(st.at("pairwise_licensed") == true);
  bool found = false;
  for (const auto &row : st.at("pairwise"))
    if (row.at("method") == "L-Res") {
      found = true;
      CHECK(row.at("r").get<double>() == 1.0);
      CHECK(row.at("effect") == "large");
      CHECK_FALSE(row.at("stars").get<std::string>().empty());
    }
  CHECK(found);

  std::ofstream(ws.dir / "judge.csv") << "cond,idx,val\n";
  CHECK_THROWS_AS(cmd_stats(cfg, "judge", log), DataError);
}

TEST_CASE("stats report shapes") {
  auto one = stats_report("violations", Direction::LowerIsBetter, "m", {{"baseline", {1, 2, 3}}}, {"HiTemp-p"},
                          LeveneCenter::Mean);
  CHECK(one.at("status") == "no-test");
  CHECK(one.at("excluded") == nlohmann::json::array({"HiTemp-p"}));

  std::vector<SampleGroup> flat{{"baseline", {1, 2, 3, 4, 5}}, {"x", {1, 2, 3, 4, 6}}, {"y", {2, 1, 3, 5, 4}}};
  auto nl = stats_report("violations", Direction::LowerIsBetter, "m", flat, {}, LeveneCenter::Median);
  CHECK(nl.at("status") == "ok");
  CHECK(nl.at("pairwise_licensed") == false);
  CHECK(nl.at("levene").at("center") == "median");
  REQUIRE(nl.at("pairwise").size() == 2);
  for (const auto &row : nl.at("pairwise")) {
    CHECK(row.at("z").is_null());
    CHECK(row.at("p_holm").is_null());
    CHECK(row.at("stars") == "");
  }

  std::vector<SampleGroup> shifted{{"baseline", {5, 6, 7, 6, 5, 7, 6, 5}}, {"x", {0, 1, 0, 1, 0, 1, 0, 0}},
                                   {"y", {5, 6, 5, 7, 6, 5, 6, 7}}};
  auto sh = stats_report("violations", Direction::LowerIsBetter, "m", shifted, {}, LeveneCenter::Mean);
  CHECK(sh.at("pairwise_licensed") == true);
  CHECK(sh.at("pairwise")[0].at("method") == "x");
  CHECK(sh.at("pairwise")[0].at("r").get<double>() == 1.0);
  CHECK_FALSE(sh.at("pairwise")[0].at("stars").get<std::string>().empty());

  std::vector<SampleGroup> nobase{{"x", {1, 2}}, {"y", {8, 9}}};
  auto nb = stats_report("violations", Direction::LowerIsBetter, "m", nobase, {}, LeveneCenter::Mean);
  CHECK(nb.at("pairwise").empty());
  CHECK_FALSE(nb.at("notes").empty());
}

TEST_CASE("reruns are byte-identical across worker counts") {
  Workspace ws("determinism");
  auto cfg = load_experiment_config(ws.write(std::string(kBody) + kConditions), ws.dir / "a");
  run_all(cfg, 1);
  auto first = tree(cfg.output_dir);
  run_all(cfg, 1);
  CHECK(tree(cfg.output_dir) == first);
  auto other = load_experiment_config(ws.dir / "exp.ini", ws.dir / "b");
  run_all(other, 3);
  CHECK(tree(other.output_dir) == first);
  CHECK(first.size() >= 10);
}

TEST_CASE("command line exit codes") {
  Workspace ws("cli");
  const auto ini = ws.write(std::string(kBody) + kConditions).string();
  CHECK(run_cli("") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("generate --config " + (ws.dir / "absent.ini").string()) == 1);
  CHECK(run_cli("generate --config " + ini + " --condition nope") == 1);
  CHECK(run_cli("calibrate --config " + ini + " --out " + (ws.dir / "o").string()) == 0);
  CHECK(fs::exists(ws.dir / "o" / "calibration.json"));

  fs::remove(ws.dir / "model.nstm");
  CHECK(run_cli("calibrate --config " + ini + " --out " + (ws.dir / "p").string()) == 2);
  CHECK_FALSE(fs::exists(ws.dir / "p"));

  // A NaN in the weights is a numeric failure.
  auto m = make_synthetic_model(fixture_synth_options(1));
  save_model(ws.dir / "model.nstm", m);
  auto bytes = slurp(ws.dir / "model.nstm");
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + bytes.size() - sizeof(float), &nan, sizeof(float));
  std::ofstream(ws.dir / "model.nstm", std::ios::binary) << bytes;
  const int code = run_cli("calibrate --config " + ini + " --out " + (ws.dir / "q").string());
  CHECK((code == 2 || code == 3));
}
