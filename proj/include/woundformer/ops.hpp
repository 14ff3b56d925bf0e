#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "woundformer/tensor.hpp"

namespace woundformer {

enum class Mode { train, eval };

enum class Activation { none, relu, gelu };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);
/// Exact form x * Phi(x) with Phi the standard normal CDF.
Tensor gelu(const Tensor& x);
Tensor activation(const Tensor& x, Activation kind);
Tensor sum(const Tensor& x);

// Layout.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const int> order);
Tensor permute(const Tensor& x, std::initializer_list<int> order);
/// [N, C, H, W] -> [N, H*W, C]
Tensor map_to_tokens(const Tensor& x);
/// [N, H*W, C] -> [N, C, H, W]
Tensor tokens_to_map(const Tensor& x, Index height, Index width);

/// Cross-correlation. `weight` is [Cout, Cin/groups, kh, kw]; `bias` may be
/// undefined. Every output element accumulates bias first, then the taps in
/// (input channel, ky, kx) order, skipping padded positions.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding,
              int groups = 1);

struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  static BatchNormStats identity(Index channels);
};

/// Per-channel normalisation over (N, H, W). Train mode normalises by the
/// biased batch variance and folds the unbiased one into `stats` with
/// `momentum`; eval mode reads `stats`.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                  Mode mode, double eps = 1e-5, double momentum = 0.1);

/// Half-pixel-centre bilinear resize with edge clamping. Upsampling only.
Tensor bilinear_upsample(const Tensor& input, Index out_h, Index out_w);

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor concat_channels(const std::vector<Tensor>& parts);

/// Batched product over matching leading axes: [..., M, K] x [..., K, N].
/// With `transpose_b` the right operand is read as [..., N, K].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
Tensor softmax(const Tensor& x, int axis = -1);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// x[..., in] * weight[out, in]^T + bias[out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

}  // namespace woundformer
