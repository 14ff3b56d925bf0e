#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "woundformer/mask.hpp"

namespace woundformer {

/// 2|P_k ∩ G_k| / (|P_k| + |G_k|). Empty when class k is in neither mask.
std::optional<double> dice_per_class(const IntMask& pred, const IntMask& gt, int k);

struct MaskPair {
  IntMask prediction;
  IntMask ground_truth;
};

struct EvalReport {
  std::vector<int> classes;
  /// Aligned with `classes`; empty where no image contains the class.
  std::vector<std::optional<double>> per_class_dsc;
  double mean_dsc = 0.0;
  Index n_images = 0;
  /// Per image: mean DSC over scored classes present in that image. This is
  /// the pairing unit for model comparisons.
  std::vector<double> per_image_mean;
};

/// Per class: mean DSC over images where the class occurs in either mask.
/// mean_dsc: unweighted mean of the present per-class values.
EvalReport aggregate_dsc(std::span<const MaskPair> samples, std::span<const int> classes);

/// One header line plus one value line; absent classes print as "NA".
std::string format_report_tsv(const EvalReport& report, std::span<const std::string> class_names);
/// "key: value" lines.
std::string format_report_text(const EvalReport& report, std::span<const std::string> class_names);

}  // namespace woundformer
