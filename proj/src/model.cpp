#include "woundformer/model.hpp"

#include "woundformer/errors.hpp"

namespace woundformer {

std::string_view to_string(DecoderKind k) { return k == DecoderKind::spatial ? "spatial" : "all_mlp"; }

DecoderKind parse_decoder_kind(std::string_view name) {
  if (name == "spatial") return DecoderKind::spatial;
  if (name == "all_mlp") return DecoderKind::all_mlp;
  throw ConfigError("unknown decoder kind '" + std::string(name) + "' (expected spatial or all_mlp)");
}

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (mlp_embed_dim <= 0) throw ConfigError("mlp_embed_dim must be positive");
}

namespace {

std::variant<SpatialDecoder, AllMlpDecoder> make_decoder(const ModelConfig& cfg, Rng& rng) {
  if (cfg.decoder_kind == DecoderKind::spatial) {
    return SpatialDecoder(cfg.decoder, cfg.encoder.channels, rng);
  }
  return AllMlpDecoder(cfg.mlp_embed_dim, cfg.decoder.num_classes, cfg.encoder.channels, rng);
}

Rng seeded(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

}  // namespace

SegmentationModel::SegmentationModel(const ModelConfig& config, std::uint64_t seed)
    : config_((config.validate(), config)),
      encoder_([&] {
        Rng rng = seeded(seed, 0);
        return MixTransformer(config.encoder, rng);
      }()),
      decoder_([&] {
        Rng rng = seeded(seed, 1);
        return make_decoder(config, rng);
      }()) {
  encoder_.collect("encoder", params_);
  std::visit([&](const auto& d) { d.collect("decoder", params_); }, decoder_);
}

Tensor SegmentationModel::forward(const Tensor& images, Mode mode) {
  const FeaturePyramid pyramid = encoder_.forward(images);
  return std::visit([&](auto& d) { return d.forward(pyramid, mode); }, decoder_);
}

Tensor SegmentationModel::forward_full(const Tensor& images, Mode mode) {
  return bilinear_upsample(forward(images, mode), images.dim(2), images.dim(3));
}

Index SegmentationModel::decoder_parameter_count() const {
  Index n = 0;
  for (const auto& p : params_.parameters) {
    if (p.name.rfind("decoder.", 0) == 0) n += p.tensor.size();
  }
  return n;
}

}  // namespace woundformer
