#pragma once

#include <array>
#include <string>
#include <vector>

#include "woundformer/encoder.hpp"
#include "woundformer/nn.hpp"

namespace woundformer {

enum class NormKind { none, batch_norm };

std::string_view to_string(NormKind n);
NormKind parse_norm(std::string_view name);

/// One decoder variant. The BN/activation switches apply to the alignment
/// projections and to the three fusion projections alike.
struct DecoderConfig {
  Index unified_channels = 128;
  NormKind align_norm = NormKind::batch_norm;
  Activation align_activation = Activation::relu;
  int align_kernel = 1;
  /// Kernel sizes (1 or 3) of the bare convs between fusion and prediction.
  std::vector<int> extra_convs{1, 3};
  Index num_classes = 7;

  /// BN + ReLU, 1x1 alignment, [1x1, 3x3] refinement.
  static DecoderConfig full(Index num_classes, Index unified_channels = 128);
  void validate() const;
};

/// Concatenation order inside each fusion step.
enum class ConcatOrder { fine_first, coarse_first };

struct ConvNormAct {
  Conv2d conv;
  std::optional<BatchNorm2d> norm;
  Activation act = Activation::none;

  Tensor operator()(const Tensor& x, Mode mode);
  void collect(const std::string& prefix, ParameterSet& out) const;
};

struct DecoderState {
  std::array<Tensor, 4> aligned;
  Tensor fused;
  Tensor refined;
  Tensor logits;
};

/// Spatially-preserving multi-scale head: align every level to a shared width,
/// fuse coarse to fine by upsample + concat + 1x1 projection, refine with the
/// configured conv stack, predict with a 1x1 conv. Feature maps stay [N, C, H, W]
/// throughout.
class SpatialDecoder {
 public:
  SpatialDecoder(const DecoderConfig& config, const StageArray& in_channels, Rng& rng);

  std::array<Tensor, 4> align_channels(const FeaturePyramid& pyramid, Mode mode);
  Tensor fuse_coarse_to_fine(const std::array<Tensor, 4>& aligned, Mode mode,
                             ConcatOrder order = ConcatOrder::fine_first);
  Tensor spatial_refine(const Tensor& x) const;
  Tensor predict_logits(const Tensor& x) const;

  Tensor forward(const FeaturePyramid& pyramid, Mode mode);
  DecoderState forward_with_state(const FeaturePyramid& pyramid, Mode mode);

  void collect(const std::string& prefix, ParameterSet& out) const;
  const DecoderConfig& config() const { return config_; }

  std::array<ConvNormAct, 4> align;
  /// fuse[0] merges level 3, fuse[1] level 2, fuse[2] level 1.
  std::array<ConvNormAct, 3> fuse;
  std::vector<Conv2d> refine;
  Conv2d head;

 private:
  DecoderConfig config_;
};

/// SegFormer's All-MLP head: per-level token-wise linear projection, upsample
/// to the finest level, concat [c4, c3, c2, c1], 1x1 fuse + BN + ReLU,
/// 1x1 classifier.
class AllMlpDecoder {
 public:
  AllMlpDecoder(Index embed_dim, Index num_classes, const StageArray& in_channels, Rng& rng);

  Tensor forward(const FeaturePyramid& pyramid, Mode mode);
  void collect(const std::string& prefix, ParameterSet& out) const;
  Index embed_dim() const { return embed_dim_; }
  Index num_classes() const { return num_classes_; }

 private:
  Index embed_dim_;
  Index num_classes_;
  std::array<Linear, 4> project_;
  Conv2d fuse_;
  BatchNorm2d fuse_norm_;
  Conv2d classify_;
};

// Closed-form counts from configuration alone.
Index decoder_parameter_count(const DecoderConfig& config, const StageArray& in_channels);
Index allmlp_parameter_count(Index embed_dim, Index num_classes, const StageArray& in_channels);
/// Multiply-accumulate x2 over every conv in the head for one h x w image.
double decoder_flops(const DecoderConfig& config, const StageArray& in_channels, Index height, Index width);
double allmlp_flops(Index embed_dim, Index num_classes, const StageArray& in_channels, Index height, Index width);

// ---------------------------------------------------------------------------
// Ablation grid

enum class LossKind { cross_entropy, focal_dice };
std::string_view to_string(LossKind k);
LossKind parse_loss(std::string_view name);

struct AblationRow {
  int align_kernel = 1;
  bool batch_norm = false;
  Activation activation = Activation::none;
  std::vector<int> extra_convs;
  LossKind loss = LossKind::cross_entropy;
  bool augmentation = false;
};

struct AblationSetup {
  DecoderConfig decoder;
  LossKind loss = LossKind::cross_entropy;
  bool augmentation = false;
};

/// The eleven decoder/loss/augmentation combinations, in order.
const std::vector<AblationRow>& ablation_rows();
/// 1-based row lookup; ArgumentError outside 1..11.
const AblationRow& ablation_row(int index);
/// ArgumentError if the row cannot be expressed as a DecoderConfig.
AblationSetup build_ablation_decoder(const AblationRow& row, Index num_classes, Index unified_channels = 128);

/// Table cells: "1x1", "3x3", "--", "1x1, 3x3", ...
std::string describe_kernels(const std::vector<int>& kernels);

}  // namespace woundformer
