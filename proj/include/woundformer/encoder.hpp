#pragma once

#include <array>
#include <optional>
#include <vector>

#include "woundformer/nn.hpp"

namespace woundformer {

using StageArray = std::array<Index, 4>;

/// Mix-Transformer stage layout. Stage i emits C_i channels at 1/(4 * 2^(i-1))
/// of the input resolution.
struct EncoderConfig {
  Index in_channels = 3;
  StageArray channels{16, 32, 64, 128};
  StageArray depths{1, 1, 1, 1};
  StageArray heads{1, 1, 2, 4};
  StageArray sr_ratios{8, 4, 2, 1};
  StageArray patch_kernels{7, 3, 3, 3};
  StageArray patch_strides{4, 2, 2, 2};
  Index ffn_expansion = 4;

  /// Desk-scale default: every MiT mechanism at ~1e5 parameters.
  static EncoderConfig micro();
  /// MiT-B5 stage widths and heads with one block per stage. Used for
  /// parameter-count and shape checks.
  static EncoderConfig b5_shape();

  void validate() const;
  /// Total downsampling up to and including `stage` (0-based).
  Index cumulative_stride(int stage) const;
};

struct FeaturePyramid {
  std::array<Tensor, 4> levels;

  const Tensor& operator[](std::size_t i) const { return levels[i]; }
  StageArray channels() const;
};

/// Strided conv followed by layer norm over channels. Returns tokens [N, h*w, C].
struct OverlapPatchEmbed {
  Conv2d proj;
  LayerNorm norm;

  static OverlapPatchEmbed create(Index in_channels, Index out_channels, int kernel, int stride, Rng& rng);
  /// Throws ShapeError unless the spatial extents are divisible by the stride.
  Tensor operator()(const Tensor& x, Index& out_h, Index& out_w) const;
  void collect(const std::string& prefix, ParameterSet& out) const;
};

/// Multi-head attention whose keys and values come from a token grid reduced
/// by a stride-`sr_ratio` conv (plus layer norm) when `sr_ratio > 1`.
struct EfficientSelfAttention {
  Linear query, key, value, proj;
  std::optional<Conv2d> reduce;
  std::optional<LayerNorm> reduce_norm;
  Index heads = 1;
  Index sr_ratio = 1;

  static EfficientSelfAttention create(Index channels, Index heads, Index sr_ratio, Rng& rng);
  Tensor operator()(const Tensor& x, Index height, Index width) const;
  void collect(const std::string& prefix, ParameterSet& out) const;
};

/// Linear expand, 3x3 depthwise conv on the token grid, GeLU, linear project.
struct MixFfn {
  Linear fc1;
  Conv2d depthwise;
  Linear fc2;

  static MixFfn create(Index channels, Index expansion, Rng& rng);
  Tensor operator()(const Tensor& x, Index height, Index width) const;
  void collect(const std::string& prefix, ParameterSet& out) const;
};

/// Pre-norm transformer block: x + attn(norm(x)), then x + ffn(norm(x)).
struct TransformerBlock {
  LayerNorm norm1;
  EfficientSelfAttention attention;
  LayerNorm norm2;
  MixFfn ffn;

  Tensor operator()(const Tensor& x, Index height, Index width) const;
  void collect(const std::string& prefix, ParameterSet& out) const;
};

struct EncoderStage {
  OverlapPatchEmbed embed;
  std::vector<TransformerBlock> blocks;
  LayerNorm norm;
};

class MixTransformer {
 public:
  MixTransformer(const EncoderConfig& config, Rng& rng);

  /// image [N, Cin, H, W] with H, W divisible by 32.
  FeaturePyramid forward(const Tensor& image) const;
  void collect(const std::string& prefix, ParameterSet& out) const;

  const EncoderConfig& config() const { return config_; }
  const std::array<EncoderStage, 4>& stages() const { return stages_; }

 private:
  EncoderConfig config_;
  std::array<EncoderStage, 4> stages_;
};

/// Closed-form parameter count of a MixTransformer built from `config`.
Index encoder_parameter_count(const EncoderConfig& config);
/// Closed-form multiply-accumulate x2 count for one image of size h x w.
double encoder_flops(const EncoderConfig& config, Index height, Index width);

}  // namespace woundformer
