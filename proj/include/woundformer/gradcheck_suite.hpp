#pragma once

#include <string>
#include <vector>

#include "woundformer/gradcheck.hpp"

namespace woundformer {

struct GradcheckCase {
  std::string name;
  GradcheckFn fn;
  std::vector<Tensor> inputs;
};

struct GradcheckCaseResult {
  std::string name;
  GradcheckReport report;
  Index elements = 0;
};

/// Every differentiable primitive plus the composite blocks (attention, Mix-FFN,
/// both decoders, both losses) on small random 64-bit inputs.
std::vector<GradcheckCase> registered_gradchecks(std::uint64_t seed = 7);

std::vector<GradcheckCaseResult> run_gradchecks(const std::vector<GradcheckCase>& cases,
                                                const GradcheckOptions& options = {});

}  // namespace woundformer
