#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "woundformer/optim.hpp"
#include "woundformer/tensor.hpp"

namespace woundformer {

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_mean_dsc = 0.0;
  /// Learning rate used during this epoch.
  double lr = 0.0;
};

/// Everything needed to resume training bit-identically.
///
/// On disk (all integers unsigned little-endian, doubles as their IEEE-754
/// bit pattern in little-endian order):
///
///   "WFCK" u32 version
///   str model_config                    (u64 length + bytes, JSON text)
///   tensors parameters, buffers, best_parameters, best_buffers
///                                       (u64 count, then per tensor: str name,
///                                        u64 rank, rank x u64 extents,
///                                        numel x f64)
///   u64 adam_step, f64 beta1, beta2, eps, u64 count, count x (u64 n, n x f64 m, n x f64 v)
///   u64 epoch, f64 best_metric, i64 best_epoch
///   f64 lr, factor, threshold, best; i64 patience, bad_epochs, reductions   (scheduler)
///   i64 patience, bad_epochs; f64 threshold, best                       (early stop)
///   u8 stopped
///   str rng_state                       (std::mt19937_64 stream text)
///   u64 count, count x (i64 epoch, f64 train_loss, f64 val_mean_dsc, f64 lr)
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string model_config;
  std::vector<StoredTensor> parameters;
  std::vector<StoredTensor> buffers;
  std::vector<StoredTensor> best_parameters;
  std::vector<StoredTensor> best_buffers;
  AdamState adam;
  int epoch = 0;
  double best_metric = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  PlateauScheduler scheduler;
  EarlyStopping stopper;
  bool stopped = false;
  std::string rng_state;
  std::vector<EpochRecord> history;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// FormatError on bad magic, unknown version or truncation.
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<StoredTensor> snapshot(const std::vector<NamedTensor>& tensors);
/// Copies values into `tensors`; ShapeError unless names and shapes line up.
void restore(std::vector<NamedTensor>& tensors, const std::vector<StoredTensor>& stored);

}  // namespace woundformer
