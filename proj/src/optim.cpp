#include "woundformer/optim.hpp"

#include <cmath>

#include "woundformer/errors.hpp"

namespace woundformer {

AdamState AdamState::for_parameters(const std::vector<NamedTensor>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(static_cast<std::size_t>(p.tensor.size()), 0.0);
    s.v.emplace_back(static_cast<std::size_t>(p.tensor.size()), 0.0);
  }
  return s;
}

void adam_step(std::vector<NamedTensor>& params, AdamState& state, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam: optimiser state tracks " + std::to_string(state.m.size()) + " tensors, model has " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto n = static_cast<std::size_t>(params[i].tensor.size());
    if (state.m[i].size() != n || state.v[i].size() != n) {
      throw ShapeError("adam: moment size mismatch for " + params[i].name);
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].tensor;
    auto w = p.mutable_data();
    const bool has_grad = p.has_grad();
    const std::span<const double> grad = has_grad ? p.grad() : std::span<const double>{};
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double g = has_grad ? grad[j] : 0.0;
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

double PlateauScheduler::step(double metric) {
  if (metric > best + threshold) {
    best = metric;
    bad_epochs = 0;
  } else if (++bad_epochs > patience) {
    lr *= factor;
    ++reductions;
    bad_epochs = 0;
  }
  return lr;
}

bool EarlyStopping::step(double metric) {
  if (metric > best + threshold) {
    best = metric;
    bad_epochs = 0;
    return false;
  }
  return ++bad_epochs >= patience;
}

}  // namespace woundformer
