#pragma once

#include <limits>
#include <vector>

#include "woundformer/nn.hpp"

namespace woundformer {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  /// Zero moments sized to match `params`.
  static AdamState for_parameters(const std::vector<NamedTensor>& params);
};

/// One bias-corrected Adam update of every parameter from its current
/// gradient. Parameters without a gradient are treated as having a zero one.
/// ShapeError when the state does not line up with `params`.
void adam_step(std::vector<NamedTensor>& params, AdamState& state, double lr);

/// Learning-rate reduction on a stalled "higher is better" metric. A value
/// counts as an improvement when it beats the best so far by more than
/// `threshold`; once more than `patience` consecutive validations fail to
/// improve, the rate is multiplied by `factor` and the counter restarts.
struct PlateauScheduler {
  double lr = 1e-4;
  double factor = 0.1;
  int patience = 5;
  double threshold = 1e-4;
  double best = -std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  int reductions = 0;

  /// Returns the learning rate to use from now on.
  double step(double metric);
};

/// Stops once `patience` consecutive validations fail to improve.
struct EarlyStopping {
  int patience = 15;
  double threshold = 1e-4;
  double best = -std::numeric_limits<double>::infinity();
  int bad_epochs = 0;

  /// True when training should stop after this validation.
  bool step(double metric);
};

}  // namespace woundformer
