#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "distill/config.hpp"
#include "distill/metrics.hpp"
#include "distill/trainer.hpp"

namespace distill {

/// Progress messages; empty means silent.
using Logger = std::function<void(const std::string&)>;

/// Generates the dataset of `config` into `dir`. Returns the config hash.
std::string run_generate(const ExperimentConfig& config, const std::filesystem::path& dir);

struct RunOptions {
  /// Continue from <dir>/state.bin when present.
  bool resume = false;
  /// Pre-generated dataset; generated from config.dataset when null.
  const Dataset* dataset = nullptr;
  /// Directory holding (or receiving) a completed pre-training state that
  /// can be shared between runs with the same pre-training settings.
  std::filesystem::path pretrain_cache;
  /// Stop after this many epochs in this invocation, leaving state.bin for
  /// a later resume (0 = run to completion).
  int stop_after_epochs = 0;
  Logger log;
};

struct RunResult {
  std::filesystem::path dir;
  std::uint64_t seed = 0;
  std::string config_hash;
  bool completed = false;
  double best_validation_auroc = 0.0;
  MetricsReport test;
};

/// One training run for `seed` in `dir`:
///   config.json   snapshot with config_hash
///   metrics.csv   per-epoch losses and validation metrics
///   state.bin     latest training state (for --resume)
///   best.ckpt     selected checkpoint
///   metrics.json  test metrics of best.ckpt
///   froc.csv      test FROC curve
RunResult run_train(const ExperimentConfig& config, std::uint64_t seed,
                    const std::filesystem::path& dir, const RunOptions& options = {});

struct SweepRow {
  double value = 0.0;
  std::vector<RunResult> runs;  // one per seed
  double mean_auroc = 0.0;
  double mean_froc = 0.0;
};

struct SweepResult {
  std::string parameter;
  std::string config_hash;
  std::vector<SweepRow> rows;  // sorted by value
  /// Pre-training only, one per seed.
  std::vector<RunResult> baseline;
  double baseline_mean_auroc = 0.0;
  double baseline_mean_froc = 0.0;
};

/// Runs every (value, seed) pair of config.sweep under `dir`. Pre-training
/// is shared per seed. DISTILL_WORKERS sets the number of worker threads.
/// Writes sweep.csv and sweep.json.
SweepResult run_sweep(const ExperimentConfig& config, const std::filesystem::path& dir,
                      const Logger& log = {});

/// Reads metrics.json of each run directory and writes froc.svg, roc.svg
/// and summary.csv into `out`. Throws ConfigError naming any missing path.
void run_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out);

/// Worker count from DISTILL_WORKERS (default 1).
int worker_count();

}  // namespace distill
