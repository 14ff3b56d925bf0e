#pragma once

#include <random>
#include <string>
#include <vector>

#include "woundformer/ops.hpp"
#include "woundformer/tensor.hpp"

namespace woundformer {

using Rng = std::mt19937_64;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Trainable parameters plus non-trainable buffers (normalisation running
/// statistics), in a stable registration order.
struct ParameterSet {
  std::vector<NamedTensor> parameters;
  std::vector<NamedTensor> buffers;

  Index parameter_count() const;
  void zero_grad();
};

namespace init {
/// Normal(0, std) resampled until within two standard deviations.
void truncated_normal(Tensor& t, double std, Rng& rng);
/// Normal(0, sqrt(2 / fan_out)) with fan_out = kh * kw * Cout / groups.
void conv_fan_out(Tensor& t, int groups, Rng& rng);
}  // namespace init

struct Conv2d {
  Tensor weight;
  Tensor bias;
  int stride = 1;
  int padding = 0;
  int groups = 1;

  static Conv2d create(Index in_channels, Index out_channels, int kernel, int stride, int padding, Rng& rng,
                       int groups = 1, bool with_bias = true);
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding, groups); }
  void collect(const std::string& prefix, ParameterSet& out) const;
};

struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear create(Index in_features, Index out_features, Rng& rng);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, ParameterSet& out) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  static LayerNorm create(Index features);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, ParameterSet& out) const;
};

struct BatchNorm2d {
  Tensor gamma;
  Tensor beta;
  BatchNormStats stats;

  static BatchNorm2d create(Index channels);
  Tensor operator()(const Tensor& x, Mode mode) { return batch_norm(x, gamma, beta, stats, mode); }
  void collect(const std::string& prefix, ParameterSet& out) const;
};

}  // namespace woundformer
