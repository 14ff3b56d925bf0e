#pragma once

#include <optional>
#include <vector>

#include "woundformer/decoder.hpp"
#include "woundformer/mask.hpp"
#include "woundformer/tensor.hpp"

namespace woundformer {

struct LossConfig {
  LossKind kind = LossKind::cross_entropy;
  double focal_gamma = 2.0;
  double dice_smooth = 1.0;
  /// Per-class weights for cross-entropy; empty means unweighted.
  std::vector<double> class_weights;

  void validate() const;
};

/// Mean over pixels of -log softmax(logits)[label]. With class weights the
/// mean is weighted by the true-class weight. logits [N, K, H, W], labels [N, H, W].
Tensor cross_entropy(const Tensor& logits, const IntMask& labels, std::span<const double> class_weights = {});

/// Mean focal term -(1 - p_t)^gamma log p_t plus soft multi-class Dice loss
/// 1 - mean_k (2 sum p_k y_k + s) / (sum p_k + sum y_k + s), equally weighted.
Tensor focal_dice(const Tensor& logits, const IntMask& labels, double gamma, double smooth);

Tensor compute_loss(const Tensor& logits, const IntMask& labels, const LossConfig& config);

}  // namespace woundformer
