// nstm: calibrate -> generate -> evaluate -> stats -> report.
#include <iostream>
#include <optional>
#include <string>

#include <omp.h>

#include <CLI11.hpp>

#include "nstm/errors.hpp"
#include "nstm/experiment.hpp"
#include "nstm/synth.hpp"
#include "nstm/weights_io.hpp"

namespace {

int run(int argc, char **argv) {
  CLI::App app{"Noise-steering experiments on small decoder-only models"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> out;
  int workers = 0;
  auto add_common = [&](CLI::App *sub) {
    sub->add_option("--config", config_path, "experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory (overrides NSTM_OUT and the config)");
    sub->add_option("--workers", workers, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  };

  auto *calibrate = app.add_subcommand("calibrate", "measure block-output RMS and derive sigma");
  add_common(calibrate);
  auto *generate = app.add_subcommand("generate", "write a JSON-lines corpus per condition");
  add_common(generate);
  std::optional<std::string> condition;
  generate->add_option("--condition", condition, "only this condition (default: all)");
  auto *evaluate = app.add_subcommand("evaluate", "per-condition metrics and the collapse summary");
  add_common(evaluate);
  auto *stats = app.add_subcommand("stats", "Kruskal-Wallis, Dunn/Holm vs baseline, Levene");
  add_common(stats);
  std::string metric = "violations";
  stats->add_option("--metric", metric, "violations or a configured per-story column");
  auto *report = app.add_subcommand("report", "markdown report and summary.csv");
  add_common(report);
  auto *all = app.add_subcommand("run", "every stage in order");
  add_common(all);

  auto *make_model = app.add_subcommand("make-model", "write the synthetic fixture model");
  std::string model_out;
  std::uint64_t seed = 1;
  make_model->add_option("--out", model_out, "weights file")->required();
  make_model->add_option("--seed", seed, "generator seed");
  auto synth = nstm::fixture_synth_options(1);
  make_model->add_option("--dc-offset", synth.dc_offset, "shared residual offset")->capture_default_str();
  make_model->add_option("--head-scale", synth.head_scale, "bigram logit scale")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(nstm::ExitCode::Usage);
  }

  if (make_model->parsed()) {
    synth.seed = seed;
    nstm::save_model(model_out, nstm::make_synthetic_model(synth));
    std::cout << "wrote " << model_out << "\n";
    return 0;
  }

  if (workers > 0) omp_set_num_threads(workers);
  std::optional<std::filesystem::path> out_path;
  if (out) out_path = *out;
  auto cfg = nstm::load_experiment_config(config_path, out_path);

  if (calibrate->parsed() || all->parsed()) nstm::cmd_calibrate(cfg, std::cout);
  if (generate->parsed() || all->parsed()) nstm::cmd_generate(cfg, condition, workers, std::cout);
  if (evaluate->parsed() || all->parsed()) nstm::cmd_evaluate(cfg, workers, std::cout);
  if (stats->parsed() || all->parsed()) nstm::cmd_stats(cfg, metric, std::cout);
  if (report->parsed() || all->parsed()) nstm::cmd_report(cfg, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  try {
    return run(argc, argv);
  } catch (const nstm::Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::filesystem::filesystem_error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(nstm::ExitCode::Data);
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(nstm::ExitCode::Data);
  }
}
