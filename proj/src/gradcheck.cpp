#include "woundformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "woundformer/errors.hpp"

namespace woundformer {

namespace {

double project(const Tensor& out, const std::vector<double>& weights) {
  const auto v = out.data();
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += weights[i] * v[i];
  return s;
}

}  // namespace

GradcheckReport gradcheck(const GradcheckFn& fn, std::vector<Tensor> inputs, const GradcheckOptions& options) {
  if (!(options.step > 0.0)) throw ArgumentError("gradcheck: step must be positive");
  for (Tensor& t : inputs) {
    if (!t.is_leaf()) throw ArgumentError("gradcheck: inputs must be leaves");
    t.set_requires_grad(true);
    t.zero_grad();
  }

  Tensor out = fn(inputs);
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::vector<double> weights(static_cast<std::size_t>(out.size()));
  for (double& w : weights) w = uni(rng);
  out.backward(weights);

  std::vector<std::vector<double>> analytic;
  for (const Tensor& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  const double h = options.step;
  const auto evaluate = [&] {
    NoGradGuard guard;
    return project(fn(inputs), weights);
  };
  const double f0 = evaluate();

  GradcheckReport report;
  report.inputs.resize(inputs.size());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_data();
    GradcheckInputReport& r = report.inputs[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + h;
      const double fp = evaluate();
      values[i] = original - h;
      const double fm = evaluate();
      values[i] = original;

      const double central = (fp - fm) / (2.0 * h);
      const double forward = (fp - f0) / h;
      const double backward = (f0 - fm) / h;
      if (std::abs(forward - backward) > 1e-3 * std::max(1.0, std::abs(central))) {
        ++r.skipped_kinks;
        continue;
      }
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(central), options.magnitude_floor});
      r.max_relative_error = std::max(r.max_relative_error, std::abs(a - central) / denom);
      ++r.checked;
    }
    report.max_relative_error = std::max(report.max_relative_error, r.max_relative_error);
  }
  report.passed = report.max_relative_error < options.tolerance;
  return report;
}

}  // namespace woundformer
