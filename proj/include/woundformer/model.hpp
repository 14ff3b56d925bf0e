#pragma once

#include <memory>
#include <variant>

#include "woundformer/decoder.hpp"
#include "woundformer/encoder.hpp"

namespace woundformer {

enum class DecoderKind { spatial, all_mlp };
std::string_view to_string(DecoderKind k);
DecoderKind parse_decoder_kind(std::string_view name);

struct ModelConfig {
  EncoderConfig encoder = EncoderConfig::micro();
  DecoderKind decoder_kind = DecoderKind::spatial;
  /// Used when decoder_kind == spatial.
  DecoderConfig decoder;
  /// Used when decoder_kind == all_mlp.
  Index mlp_embed_dim = 128;

  Index num_classes() const { return decoder.num_classes; }
  void validate() const;
};

/// Encoder plus one of the two heads. Parameters are registered under
/// "encoder." and "decoder.".
class SegmentationModel {
 public:
  SegmentationModel(const ModelConfig& config, std::uint64_t seed);

  /// Logits at 1/4 of the input resolution, [N, K, H/4, W/4].
  Tensor forward(const Tensor& images, Mode mode);
  /// Logits bilinearly upsampled to the input resolution.
  Tensor forward_full(const Tensor& images, Mode mode);

  const ParameterSet& parameters() const { return params_; }
  ParameterSet& parameters() { return params_; }
  const ModelConfig& config() const { return config_; }
  Index decoder_parameter_count() const;

 private:
  ModelConfig config_;
  MixTransformer encoder_;
  std::variant<SpatialDecoder, AllMlpDecoder> decoder_;
  ParameterSet params_;
};

}  // namespace woundformer
