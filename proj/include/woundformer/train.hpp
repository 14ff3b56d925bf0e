#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "woundformer/checkpoint.hpp"
#include "woundformer/data.hpp"
#include "woundformer/losses.hpp"
#include "woundformer/metrics.hpp"
#include "woundformer/model.hpp"
#include "woundformer/optim.hpp"
#include "woundformer/stats.hpp"

namespace woundformer {

struct TrainConfig {
  double learning_rate = 1e-4;
  /// 4 at micro scale; the full-scale protocol uses 8.
  Index batch_size = 4;
  int max_epochs = 200;
  double plateau_factor = 0.1;
  int plateau_patience = 5;
  int early_stop_patience = 15;
  /// Absolute improvement in validation mean DSC that resets both counters.
  double improvement_threshold = 1e-4;
  std::uint64_t seed = 0;
  Index input_size = 224;
  bool augment = false;
  /// Reload the best-validation weights once training ends.
  bool restore_best = true;

  void validate() const;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_metric = 0.0;
  bool stopped_early = false;
};

/// Mini-batch training with Adam, plateau LR reduction and early stopping on
/// validation mean DSC. When `val` is empty the training set is monitored.
class Trainer {
 public:
  Trainer(const ModelConfig& model, const TrainConfig& train, const LossConfig& loss,
          const AugmentConfig& augment, std::vector<SegSample> train_set, std::vector<SegSample> val_set);

  bool finished() const;
  EpochRecord run_epoch();
  TrainResult run(const std::function<void(const EpochRecord&)>& on_epoch = {});
  void restore_best();

  Checkpoint checkpoint() const;
  /// ConfigError when the checkpoint was written for another model config.
  void resume(const Checkpoint& ckpt);

  SegmentationModel& model() { return model_; }
  const std::vector<EpochRecord>& history() const { return history_; }
  int epoch() const { return epoch_; }
  double learning_rate() const { return scheduler_.lr; }

 private:
  double train_one_epoch();

  ModelConfig model_config_;
  TrainConfig config_;
  LossConfig loss_;
  AugmentConfig augment_;
  std::vector<SegSample> train_;
  std::vector<SegSample> val_;
  SegmentationModel model_;
  AdamState adam_;
  PlateauScheduler scheduler_;
  EarlyStopping stopper_;
  Rng rng_;
  int epoch_ = 0;
  bool stopped_ = false;
  double best_metric_ = -std::numeric_limits<double>::infinity();
  int best_epoch_ = 0;
  std::vector<StoredTensor> best_params_;
  std::vector<StoredTensor> best_buffers_;
  std::vector<EpochRecord> history_;
};

/// Images stacked to [N, 3, H, W] and masks to [N, H, W].
std::pair<Tensor, IntMask> make_batch(const std::vector<SegSample>& samples, std::span<const std::size_t> indices);

struct Evaluation {
  EvalReport report;
  std::vector<IntMask> predictions;
};

/// Argmax of full-resolution logits in eval mode, scored on every class
/// 0..K-1. LabelRangeError when a mask holds an index >= K.
Evaluation evaluate(SegmentationModel& model, const std::vector<SegSample>& samples, Index batch_size = 4);

struct Comparison {
  /// Absent when every paired difference is zero.
  std::optional<PairedTestResult> test;
  double mean_a = 0.0;
  double mean_b = 0.0;
  std::string verdict;
};

/// Paired Wilcoxon test on per-image mean DSC. ArgumentError on a length
/// mismatch or too few non-zero differences.
Comparison compare_models(std::span<const double> per_image_a, std::span<const double> per_image_b,
                          double alpha = 0.05);

// ---------------------------------------------------------------------------

struct AblationResult {
  int row = 0;
  AblationRow row_config;
  EvalReport report;
  TrainResult training;
};

/// Trains ablation row `row` with `base` settings (decoder, loss kind and
/// augmentation come from the row) and scores `test`.
AblationResult run_ablation(int row, const ModelConfig& base, const TrainConfig& train, const LossConfig& loss,
                            const AugmentConfig& augment, const DatasetSplit& data);

/// Header of the ablation TSV: the configuration columns, then DSC.
std::string ablation_tsv_header();
std::string ablation_tsv_row(const AblationResult& result);

}  // namespace woundformer
