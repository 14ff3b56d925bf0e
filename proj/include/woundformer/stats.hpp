#pragma once

#include <span>
#include <vector>

#include "woundformer/tensor.hpp"

namespace woundformer {

struct PairedTestResult {
  /// min(W+, W-) over the non-zero differences.
  double statistic = 0.0;
  double p_value = 1.0;
  /// |Z| / sqrt(n_pairs), Z from the tie-corrected normal approximation.
  double effect_size_r = 0.0;
  double z = 0.0;
  Index n_pairs = 0;
  bool exact = false;
};

/// Largest number of non-zero differences handled by the exact null distribution.
inline constexpr Index kExactWilcoxonLimit = 20;

/// Two-sided Wilcoxon signed-rank test on a[i] - b[i]. Zero differences are
/// dropped; tied magnitudes share their average rank. With at most 20 pairs
/// left the p-value is exact over all 2^n sign patterns (tied ranks included),
/// otherwise it uses the normal approximation with tie and continuity
/// correction.
///
/// Throws UndefinedTestError when every difference is zero, ArgumentError on a
/// length mismatch or fewer than 5 non-zero differences.
PairedTestResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

/// Average ranks (1-based) of |d|.
std::vector<double> average_ranks(std::span<const double> magnitudes);

}  // namespace woundformer
