#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "woundformer/tensor.hpp"

namespace woundformer {

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Gradients smaller than this are compared absolutely rather than relatively.
  double magnitude_floor = 1e-3;
  std::uint64_t seed = 0x5eed;
};

struct GradcheckInputReport {
  double max_relative_error = 0.0;
  Index checked = 0;
  /// Elements whose one-sided differences disagree: a kink sits inside the
  /// finite-difference stencil, so they are excluded from the comparison.
  Index skipped_kinks = 0;
};

struct GradcheckReport {
  std::vector<GradcheckInputReport> inputs;
  double max_relative_error = 0.0;
  bool passed = false;
};

using GradcheckFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares tape gradients of <r, fn(inputs)> against central differences,
/// where r is a fixed random projection of the output. `inputs` must be
/// leaves; they are perturbed in place and restored.
GradcheckReport gradcheck(const GradcheckFn& fn, std::vector<Tensor> inputs,
                          const GradcheckOptions& options = {});

}  // namespace woundformer
