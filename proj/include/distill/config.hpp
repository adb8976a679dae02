#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "distill/synth_data.hpp"
#include "distill/trainer.hpp"

namespace distill {

/// Parameters a sweep may vary. All of them only affect distillation.
inline constexpr const char* kSweepParameters[] = {"center_t", "max_strength_a0", "positive_fraction"};

struct SweepSpec {
  std::string parameter;
  std::vector<double> values;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  TrainConfig train;
  std::optional<SweepSpec> sweep;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "runs";

  /// Throws ConfigError.
  void validate() const;
};

// JSON conversions. Readers fill missing keys with defaults and reject
// unknown keys and ill-typed values with ConfigError.
nlohmann::json to_json(const DatasetSpec& spec);
nlohmann::json to_json(const TrainConfig& config);
nlohmann::json to_json(const ExperimentConfig& config);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
ExperimentConfig experiment_from_json(const nlohmann::json& j);

/// Sets a dotted key ("train.learning_rate=1e-3") in a JSON document. The
/// value is parsed as JSON when possible and kept as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Reads a config file (or defaults when `path` is empty) and applies the
/// overrides in order.
ExperimentConfig load_experiment_config(const std::optional<std::filesystem::path>& path,
                                        const std::vector<std::string>& overrides = {});

/// 16 hex digits of FNV-1a over the canonical JSON of dataset, train and
/// sweep. The output directory and the seed list do not enter the hash.
std::string config_hash(const ExperimentConfig& config);

/// 16 hex digits of 64-bit FNV-1a.
std::string fnv1a_hex(std::string_view bytes);

/// Sets the swept parameter on a training config.
void apply_sweep_value(TrainConfig& config, const std::string& parameter, double value);

}  // namespace distill
