// distill: dataset generation, training runs, sweeps and reports.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "distill/error.hpp"
#include "distill/experiment.hpp"

namespace fs = std::filesystem;
using namespace distill;

namespace {

constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::vector<std::uint64_t> seeds;
  std::string out;
  bool quiet = false;

  ExperimentConfig load() const {
    std::optional<fs::path> path;
    if (!config.empty()) path = config;
    ExperimentConfig c = load_experiment_config(path, overrides);
    if (!seeds.empty()) c.seeds = seeds;
    if (!out.empty()) c.output_dir = out;
    return c;
  }

  Logger logger() const {
    if (quiet) return {};
    return [](const std::string& m) { std::cerr << m << std::endl; };
  }
};

void add_common(CLI::App* cmd, Common& c, bool with_seed) {
  cmd->add_option("--config", c.config, "JSON experiment config");
  cmd->add_option("--override", c.overrides, "dotted key=value applied after the config file");
  if (with_seed) cmd->add_option("--seed", c.seeds, "training seed (repeatable)");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_flag("--quiet", c.quiet, "no progress output");
}

void print_metrics(const RunResult& r) {
  std::printf("%s seed %llu auroc %.4f froc %.4f config %s\n", r.dir.generic_string().c_str(),
              static_cast<unsigned long long>(r.seed), r.test.auroc, r.test.froc.score, r.config_hash.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised fracture-detection toy experiments"};
  app.require_subcommand(1);

  Common gen_opts, train_opts, sweep_opts;
  bool resume = false;
  int stop_after = 0;
  std::vector<std::string> report_dirs;
  std::string report_out = "report";

  auto* gen = app.add_subcommand("generate", "write the synthetic dataset to disk");
  add_common(gen, gen_opts, false);

  auto* train = app.add_subcommand("train", "pre-train and distill, one run directory per seed");
  add_common(train, train_opts, true);
  train->add_flag("--resume", resume, "continue from state.bin in the run directory");
  train->add_option("--stop-after", stop_after, "stop after this many epochs (for checkpoint tests)")
      ->check(CLI::NonNegativeNumber);

  auto* sweep = app.add_subcommand("sweep", "run the sweep section of the config over all seeds");
  add_common(sweep, sweep_opts, true);

  auto* report = app.add_subcommand("report", "FROC/ROC plots and a summary table for run directories");
  report->add_option("runs", report_dirs, "run directories")->required();
  report->add_option("--out", report_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*gen) {
      const ExperimentConfig c = gen_opts.load();
      const fs::path dir = gen_opts.out.empty() ? fs::path(c.output_dir) / "dataset" : fs::path(gen_opts.out);
      const std::string hash = run_generate(c, dir);
      std::printf("%s config %s\n", dir.generic_string().c_str(), hash.c_str());
    } else if (*train) {
      const ExperimentConfig c = train_opts.load();
      const Dataset data = generate_dataset(c.dataset);
      const bool many = c.seeds.size() > 1;
      for (std::uint64_t seed : c.seeds) {
        RunOptions o;
        o.resume = resume;
        o.dataset = &data;
        o.stop_after_epochs = stop_after;
        o.log = train_opts.logger();
        const fs::path dir = many ? fs::path(c.output_dir) / ("seed-" + std::to_string(seed)) : fs::path(c.output_dir);
        const RunResult r = run_train(c, seed, dir, o);
        if (r.completed) {
          print_metrics(r);
        } else {
          std::printf("%s seed %llu stopped; continue with --resume\n", dir.generic_string().c_str(),
                      static_cast<unsigned long long>(seed));
        }
      }
    } else if (*sweep) {
      const ExperimentConfig c = sweep_opts.load();
      const SweepResult s = run_sweep(c, c.output_dir, sweep_opts.logger());
      std::printf("baseline auroc %.4f froc %.4f\n", s.baseline_mean_auroc, s.baseline_mean_froc);
      for (const SweepRow& row : s.rows) {
        std::printf("%s=%g auroc %.4f froc %.4f\n", s.parameter.c_str(), row.value, row.mean_auroc, row.mean_froc);
      }
      std::printf("written %s/sweep.csv config %s\n", c.output_dir.c_str(), s.config_hash.c_str());
    } else if (*report) {
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      run_report(dirs, report_out);
      std::printf("written %s/froc.svg %s/roc.svg %s/summary.csv\n", report_out.c_str(), report_out.c_str(),
                  report_out.c_str());
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return 0;
}
