#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "woundformer/data.hpp"
#include "woundformer/losses.hpp"
#include "woundformer/model.hpp"
#include "woundformer/train.hpp"

namespace woundformer {

struct DataConfig {
  /// "six_tissue" or "dfu_tissue"; fixes the class count.
  std::string palette = "six_tissue";
  /// When empty, a synthetic dataset is generated and split instead.
  std::string train_manifest;
  std::string val_manifest;
  std::string test_manifest;
  Index synthetic_samples = 64;
  Index synthetic_size = 64;
  std::uint64_t synthetic_seed = 1;
  bool boundary_heavy = false;
  std::array<double, 3> split{0.8, 0.1, 0.1};
};

struct OutputConfig {
  std::string dir = "runs";
  std::string checkpoint = "model.wfck";
  std::string results_tsv = "ablation.tsv";
};

struct RunConfig {
  /// "micro", "b5_shape" or "custom" (custom takes the encoder arrays verbatim).
  std::string encoder_preset = "micro";
  ModelConfig model;
  LossConfig loss;
  AugmentConfig augment;
  TrainConfig train;
  DataConfig data;
  OutputConfig output;

  ClassPalette palette() const { return ClassPalette::named(data.palette); }
  void validate() const;
};

/// Environment variable naming the config file used when none is given.
inline constexpr const char* kConfigEnvVar = "WOUNDFORMER_CONFIG";

/// Defaults, then the JSON file (if any), then `overrides` of the form
/// "section.key=value" (value parsed as JSON, falling back to a bare string).
/// Unknown sections or keys and type mismatches raise ConfigError.
RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          const std::vector<std::string>& overrides = {});
/// The file named by WOUNDFORMER_CONFIG, if set.
std::optional<std::filesystem::path> default_config_path();

std::string run_config_to_json(const RunConfig& config, int indent = 2);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

/// Train/val/test sets from the manifests, or a seeded synthetic split.
DatasetSplit load_data(const RunConfig& config);

}  // namespace woundformer
