#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "distill/losses.hpp"
#include "distill/metrics.hpp"
#include "distill/model.hpp"
#include "distill/sharpening.hpp"
#include "distill/synth_data.hpp"

namespace distill {

/// Sample subsets drawn into a batch.
enum class Subset : std::uint8_t { Region = 0, Negative = 1, Positive = 2 };
inline constexpr std::size_t kSubsetCount = 3;

struct TrainConfig {
  double learning_rate = 3e-3;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int batch_size = 16;
  int epochs_pretrain = 10;
  int epochs_distill = 15;
  double ema_alpha = 0.999;
  SharpeningConfig sharpening;
  /// Fractions over {R, N, P}; empty means proportional to subset sizes.
  std::vector<double> batch_mix;
  int min_region_per_batch = 4;
  /// Share of P used during distillation (a prefix of the P list).
  double positive_fraction = 1.0;
  /// Optimizer steps per epoch; 0 means ceil(samples / batch_size).
  int steps_per_epoch = 0;
  ArchitectureSpec architecture;
  AugmentRanges augmentation;
  bool augment = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One row of the per-epoch metrics log.
struct EpochRecord {
  int epoch = 0;  // 1-based, counted across both stages
  std::string stage;
  double loss_total = 0.0;
  double loss_supervised = 0.0;
  double loss_semi = 0.0;
  double val_auroc = 0.0;
  double val_froc = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

enum class Stage : std::uint8_t { Pretrain = 0, Distill = 1 };

struct TrainState {
  ModelCheckpoint student;
  ModelCheckpoint teacher;
  std::uint64_t step_index = 0;  // optimizer steps within the current stage
  std::vector<float> adam_m;
  std::vector<float> adam_v;
  double best_validation_auroc = -1.0;
  ModelCheckpoint best_checkpoint;
  Stage stage = Stage::Pretrain;
  int epochs_done_in_stage = 0;
  std::vector<EpochRecord> history;

  bool operator==(const TrainState&) const = default;
};

/// Fresh state around an initial model; teacher equals student.
TrainState make_state(const ModelCheckpoint& init, Stage stage);

/// theta' <- alpha * theta' + (1 - alpha) * theta, evaluated in double and
/// stored in float. step_index is incremented. Throws ConfigError on an
/// architecture mismatch.
ModelCheckpoint ema_update(const ModelCheckpoint& teacher, const ModelCheckpoint& student,
                           double alpha);

/// Batch fractions over {R, N, P} after applying the proportional default,
/// the R floor of min_region_per_batch / batch_size and renormalization.
std::array<double, kSubsetCount> effective_fractions(const TrainConfig& config,
                                                     const std::array<std::size_t, kSubsetCount>& sizes);

/// Per-step counts that sum to batch_size; the carried remainders make the
/// epoch totals track the fractions exactly up to rounding.
std::vector<std::array<int, kSubsetCount>> plan_batches(
    const std::array<double, kSubsetCount>& fractions, int batch_size, int steps);

/// Supervised update on R/N members. Returns the batch loss.
LossValue pretrain_step(TrainState& state, std::span<const Sample> batch, const TrainConfig& config);

/// Teacher pseudo-GT on P members (sharpened, held constant), BCE on R/N,
/// one AdamW step on the student, then the EMA teacher update.
LossValue distill_step(TrainState& state, std::span<const Sample> batch, const TrainConfig& config);

/// Probability maps and ground truth for evaluation.
std::vector<EvalRecord> predict_records(const ModelCheckpoint& checkpoint,
                                        std::span<const Sample> samples);
MetricsReport evaluate_checkpoint(const ModelCheckpoint& checkpoint,
                                  std::span<const Sample> samples);

struct StageOptions {
  /// Called after every completed epoch with the current state.
  std::function<void(const TrainState&)> on_epoch;
};

/// Supervised pre-training on R and N with per-epoch validation AUROC model
/// selection. Throws ConfigError when R is empty.
TrainState run_pretrain(const Dataset& dataset, const TrainConfig& config,
                        const StageOptions& options = {},
                        std::optional<TrainState> resume = std::nullopt);
ModelCheckpoint pretrain(const Dataset& dataset, const TrainConfig& config);

/// Distillation epochs starting from a completed pre-training state (or a
/// partially completed distillation state). Selection continues across the
/// pre-training history: the best checkpoint is the one with the highest
/// validation AUROC over all epochs, ties resolved toward later epochs.
TrainState run_distill(const Dataset& dataset, const TrainConfig& config,
                       const TrainState& from, const StageOptions& options = {});

struct TrainedResult {
  ModelCheckpoint best_checkpoint;
  double best_validation_auroc = 0.0;
  std::vector<EpochRecord> history;
  TrainState pretrained;
};

/// Pre-training followed by distillation. When no P sample is selected
/// (positive_fraction = 0) the distillation stage is skipped and the result
/// is the pre-training result. `pretrained` may supply a completed
/// pre-training state computed with the same config.
TrainedResult train(const Dataset& dataset, const TrainConfig& config,
                    const StageOptions& options = {},
                    const TrainState* pretrained = nullptr);

/// Binary serialization of a full training state for resuming.
void save_train_state(const TrainState& state, const std::filesystem::path& path);
TrainState load_train_state(const std::filesystem::path& path);

std::string history_csv(std::span<const EpochRecord> history);

}  // namespace distill
