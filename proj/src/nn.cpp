#include "woundformer/nn.hpp"

#include <cmath>

namespace woundformer {

Index ParameterSet::parameter_count() const {
  Index n = 0;
  for (const auto& p : parameters) n += p.tensor.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : parameters) p.tensor.zero_grad();
}

namespace init {

void truncated_normal(Tensor& t, double std, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : t.mutable_data()) {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    v = z * std;
  }
}

void conv_fan_out(Tensor& t, int groups, Rng& rng) {
  const double fan_out = static_cast<double>(t.dim(2) * t.dim(3) * t.dim(0)) / groups;
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_out));
  for (double& v : t.mutable_data()) v = normal(rng);
}

}  // namespace init

Conv2d Conv2d::create(Index in_channels, Index out_channels, int kernel, int stride, int padding, Rng& rng,
                      int groups, bool with_bias) {
  Conv2d c;
  c.weight = Tensor::zeros({out_channels, in_channels / groups, kernel, kernel}, true);
  init::conv_fan_out(c.weight, groups, rng);
  if (with_bias) c.bias = Tensor::zeros({out_channels}, true);
  c.stride = stride;
  c.padding = padding;
  c.groups = groups;
  return c;
}

void Conv2d::collect(const std::string& prefix, ParameterSet& out) const {
  out.parameters.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.parameters.push_back({prefix + ".bias", bias});
}

Linear Linear::create(Index in_features, Index out_features, Rng& rng) {
  Linear l;
  l.weight = Tensor::zeros({out_features, in_features}, true);
  init::truncated_normal(l.weight, 0.02, rng);
  l.bias = Tensor::zeros({out_features}, true);
  return l;
}

void Linear::collect(const std::string& prefix, ParameterSet& out) const {
  out.parameters.push_back({prefix + ".weight", weight});
  out.parameters.push_back({prefix + ".bias", bias});
}

LayerNorm LayerNorm::create(Index features) {
  return {Tensor::full({features}, 1.0, true), Tensor::zeros({features}, true)};
}

void LayerNorm::collect(const std::string& prefix, ParameterSet& out) const {
  out.parameters.push_back({prefix + ".gamma", gamma});
  out.parameters.push_back({prefix + ".beta", beta});
}

BatchNorm2d BatchNorm2d::create(Index channels) {
  return {Tensor::full({channels}, 1.0, true), Tensor::zeros({channels}, true),
          BatchNormStats::identity(channels)};
}

void BatchNorm2d::collect(const std::string& prefix, ParameterSet& out) const {
  out.parameters.push_back({prefix + ".gamma", gamma});
  out.parameters.push_back({prefix + ".beta", beta});
  out.buffers.push_back({prefix + ".running_mean", stats.running_mean});
  out.buffers.push_back({prefix + ".running_var", stats.running_var});
}

}  // namespace woundformer
