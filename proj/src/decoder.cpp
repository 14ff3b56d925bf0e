#include "woundformer/decoder.hpp"

#include <string>

#include "woundformer/errors.hpp"

namespace woundformer {

std::string_view to_string(NormKind n) { return n == NormKind::batch_norm ? "batch_norm" : "none"; }

NormKind parse_norm(std::string_view name) {
  if (name == "none") return NormKind::none;
  if (name == "batch_norm") return NormKind::batch_norm;
  throw ConfigError("unknown normalisation '" + std::string(name) + "'");
}

DecoderConfig DecoderConfig::full(Index num_classes, Index unified_channels) {
  DecoderConfig c;
  c.num_classes = num_classes;
  c.unified_channels = unified_channels;
  return c;
}

void DecoderConfig::validate() const {
  if (unified_channels < 1) throw ConfigError("decoder: unified_channels must be positive");
  if (num_classes < 2) throw ConfigError("decoder: need at least two classes");
  if (align_kernel != 1 && align_kernel != 3) throw ConfigError("decoder: align_kernel must be 1 or 3");
  if (extra_convs.size() > 2) throw ConfigError("decoder: at most two extra convs");
  for (int k : extra_convs) {
    if (k != 1 && k != 3) throw ConfigError("decoder: extra conv kernels must be 1 or 3");
  }
}

Tensor ConvNormAct::operator()(const Tensor& x, Mode mode) {
  Tensor y = conv(x);
  if (norm) y = (*norm)(y, mode);
  return activation(y, act);
}

void ConvNormAct::collect(const std::string& prefix, ParameterSet& out) const {
  conv.collect(prefix + ".conv", out);
  if (norm) norm->collect(prefix + ".norm", out);
}

namespace {

ConvNormAct make_block(Index in, Index out, int kernel, const DecoderConfig& cfg, Rng& rng) {
  ConvNormAct b;
  b.conv = Conv2d::create(in, out, kernel, 1, kernel / 2, rng);
  if (cfg.align_norm == NormKind::batch_norm) b.norm = BatchNorm2d::create(out);
  b.act = cfg.align_activation;
  return b;
}

void check_pyramid(const FeaturePyramid& p, const StageArray& expected) {
  for (int i = 0; i < 4; ++i) {
    if (!p.levels[i].defined() || p.levels[i].rank() != 4) throw ShapeError("decoder: incomplete feature pyramid");
    if (p.levels[i].dim(1) != expected[i]) {
      throw ShapeError("decoder: level " + std::to_string(i + 1) + " has " + std::to_string(p.levels[i].dim(1)) +
                       " channels, expected " + std::to_string(expected[i]));
    }
  }
}

}  // namespace

SpatialDecoder::SpatialDecoder(const DecoderConfig& config, const StageArray& in_channels, Rng& rng)
    : config_(config) {
  config_.validate();
  const Index c = config_.unified_channels;
  for (int i = 0; i < 4; ++i) align[i] = make_block(in_channels[i], c, config_.align_kernel, config_, rng);
  for (int i = 0; i < 3; ++i) fuse[i] = make_block(2 * c, c, 1, config_, rng);
  for (int k : config_.extra_convs) refine.push_back(Conv2d::create(c, c, k, 1, k / 2, rng));
  head = Conv2d::create(c, config_.num_classes, 1, 1, 0, rng);
}

std::array<Tensor, 4> SpatialDecoder::align_channels(const FeaturePyramid& pyramid, Mode mode) {
  std::array<Tensor, 4> out;
  for (int i = 0; i < 4; ++i) {
    if (pyramid.levels[i].dim(1) != align[i].conv.weight.dim(1)) {
      throw ShapeError("decoder: level " + std::to_string(i + 1) + " channel count does not match alignment conv");
    }
    out[i] = align[i](pyramid.levels[i], mode);
  }
  return out;
}

Tensor SpatialDecoder::fuse_coarse_to_fine(const std::array<Tensor, 4>& aligned, Mode mode, ConcatOrder order) {
  Tensor x = aligned[3];
  for (int level = 2, step = 0; level >= 0; --level, ++step) {
    const Tensor& fine = aligned[level];
    const Tensor up = bilinear_upsample(x, fine.dim(2), fine.dim(3));
    const Tensor merged = order == ConcatOrder::fine_first ? concat_channels(fine, up) : concat_channels(up, fine);
    x = fuse[step](merged, mode);
  }
  return x;
}

Tensor SpatialDecoder::spatial_refine(const Tensor& x) const {
  Tensor y = x;
  for (const Conv2d& conv : refine) y = conv(y);
  return y;
}

Tensor SpatialDecoder::predict_logits(const Tensor& x) const { return head(x); }

DecoderState SpatialDecoder::forward_with_state(const FeaturePyramid& pyramid, Mode mode) {
  DecoderState s;
  s.aligned = align_channels(pyramid, mode);
  s.fused = fuse_coarse_to_fine(s.aligned, mode);
  s.refined = spatial_refine(s.fused);
  s.logits = predict_logits(s.refined);
  return s;
}

Tensor SpatialDecoder::forward(const FeaturePyramid& pyramid, Mode mode) {
  return forward_with_state(pyramid, mode).logits;
}

void SpatialDecoder::collect(const std::string& prefix, ParameterSet& out) const {
  for (int i = 0; i < 4; ++i) align[i].collect(prefix + ".align" + std::to_string(i + 1), out);
  for (int i = 0; i < 3; ++i) fuse[i].collect(prefix + ".fuse" + std::to_string(3 - i), out);
  for (std::size_t i = 0; i < refine.size(); ++i) refine[i].collect(prefix + ".refine" + std::to_string(i), out);
  head.collect(prefix + ".head", out);
}

// ---------------------------------------------------------------------------

AllMlpDecoder::AllMlpDecoder(Index embed_dim, Index num_classes, const StageArray& in_channels, Rng& rng)
    : embed_dim_(embed_dim), num_classes_(num_classes) {
  if (embed_dim < 1 || num_classes < 2) throw ConfigError("all-mlp head: bad embed_dim or class count");
  for (int i = 0; i < 4; ++i) project_[i] = Linear::create(in_channels[i], embed_dim, rng);
  fuse_ = Conv2d::create(4 * embed_dim, embed_dim, 1, 1, 0, rng, 1, false);
  fuse_norm_ = BatchNorm2d::create(embed_dim);
  classify_ = Conv2d::create(embed_dim, num_classes, 1, 1, 0, rng);
}

Tensor AllMlpDecoder::forward(const FeaturePyramid& pyramid, Mode mode) {
  StageArray expected;
  for (int i = 0; i < 4; ++i) expected[i] = project_[i].weight.dim(1);
  check_pyramid(pyramid, expected);
  const Index h1 = pyramid[0].dim(2), w1 = pyramid[0].dim(3);
  std::vector<Tensor> parts;
  for (int i = 3; i >= 0; --i) {
    const Tensor& f = pyramid[i];
    const Tensor tokens = project_[i](map_to_tokens(f));
    parts.push_back(bilinear_upsample(tokens_to_map(tokens, f.dim(2), f.dim(3)), h1, w1));
  }
  const Tensor fused = relu(fuse_norm_(fuse_(concat_channels(parts)), mode));
  return classify_(fused);
}

void AllMlpDecoder::collect(const std::string& prefix, ParameterSet& out) const {
  for (int i = 0; i < 4; ++i) project_[i].collect(prefix + ".project" + std::to_string(i + 1), out);
  fuse_.collect(prefix + ".fuse", out);
  fuse_norm_.collect(prefix + ".fuse_norm", out);
  classify_.collect(prefix + ".classify", out);
}

// ---------------------------------------------------------------------------

Index decoder_parameter_count(const DecoderConfig& config, const StageArray& in_channels) {
  const Index c = config.unified_channels;
  const Index k = config.align_kernel;
  const Index bn = config.align_norm == NormKind::batch_norm ? 2 * c : 0;
  Index total = 0;
  for (Index ci : in_channels) total += ci * c * k * k + c + bn;
  total += 3 * (2 * c * c + c + bn);
  for (int rk : config.extra_convs) total += c * c * rk * rk + c;
  total += c * config.num_classes + config.num_classes;
  return total;
}

Index allmlp_parameter_count(Index embed_dim, Index num_classes, const StageArray& in_channels) {
  Index total = 0;
  for (Index ci : in_channels) total += ci * embed_dim + embed_dim;
  total += 4 * embed_dim * embed_dim + 2 * embed_dim;
  total += embed_dim * num_classes + num_classes;
  return total;
}

double decoder_flops(const DecoderConfig& config, const StageArray& in_channels, Index height, Index width) {
  const double c = static_cast<double>(config.unified_channels);
  const double k = static_cast<double>(config.align_kernel);
  double total = 0.0;
  double pixels[4];
  for (int i = 0; i < 4; ++i) {
    const Index s = Index{4} << i;
    pixels[i] = static_cast<double>((height / s) * (width / s));
    total += 2.0 * static_cast<double>(in_channels[i]) * c * k * k * pixels[i];
  }
  for (int level = 2; level >= 0; --level) total += 2.0 * 2.0 * c * c * pixels[level];
  for (int rk : config.extra_convs) total += 2.0 * c * c * rk * rk * pixels[0];
  total += 2.0 * c * static_cast<double>(config.num_classes) * pixels[0];
  return total;
}

double allmlp_flops(Index embed_dim, Index num_classes, const StageArray& in_channels, Index height, Index width) {
  const double e = static_cast<double>(embed_dim);
  double total = 0.0;
  double finest = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Index s = Index{4} << i;
    const double px = static_cast<double>((height / s) * (width / s));
    if (i == 0) finest = px;
    total += 2.0 * static_cast<double>(in_channels[i]) * e * px;
  }
  total += 2.0 * 4.0 * e * e * finest;
  total += 2.0 * e * static_cast<double>(num_classes) * finest;
  return total;
}

// ---------------------------------------------------------------------------

std::string_view to_string(LossKind k) { return k == LossKind::focal_dice ? "focal_dice" : "cross_entropy"; }

LossKind parse_loss(std::string_view name) {
  if (name == "cross_entropy") return LossKind::cross_entropy;
  if (name == "focal_dice") return LossKind::focal_dice;
  throw ConfigError("unknown loss '" + std::string(name) + "'");
}

const std::vector<AblationRow>& ablation_rows() {
  using A = Activation;
  using L = LossKind;
  static const std::vector<AblationRow> rows{
      {1, false, A::none, {}, L::cross_entropy, false},
      {1, true, A::none, {}, L::cross_entropy, false},
      {1, true, A::gelu, {}, L::cross_entropy, false},
      {1, true, A::relu, {}, L::cross_entropy, false},
      {3, true, A::relu, {}, L::cross_entropy, false},
      {1, true, A::relu, {1}, L::cross_entropy, false},
      {1, true, A::relu, {1, 1}, L::cross_entropy, false},
      {1, true, A::relu, {3}, L::cross_entropy, false},
      {1, true, A::relu, {1, 3}, L::cross_entropy, false},
      {1, true, A::relu, {1, 3}, L::focal_dice, true},
      {1, true, A::relu, {1, 3}, L::cross_entropy, true},
  };
  return rows;
}

const AblationRow& ablation_row(int index) {
  const auto& rows = ablation_rows();
  if (index < 1 || index > static_cast<int>(rows.size())) {
    throw ArgumentError("ablation row must be in 1.." + std::to_string(rows.size()) + ", got " +
                        std::to_string(index));
  }
  return rows[static_cast<std::size_t>(index - 1)];
}

AblationSetup build_ablation_decoder(const AblationRow& row, Index num_classes, Index unified_channels) {
  if (row.align_kernel != 1 && row.align_kernel != 3) throw ArgumentError("ablation: conv must be 1x1 or 3x3");
  if (row.extra_convs.size() > 2) throw ArgumentError("ablation: at most two additional convs");
  for (int k : row.extra_convs) {
    if (k != 1 && k != 3) throw ArgumentError("ablation: additional convs must be 1x1 or 3x3");
  }
  AblationSetup s;
  s.decoder.unified_channels = unified_channels;
  s.decoder.num_classes = num_classes;
  s.decoder.align_kernel = row.align_kernel;
  s.decoder.align_norm = row.batch_norm ? NormKind::batch_norm : NormKind::none;
  s.decoder.align_activation = row.activation;
  s.decoder.extra_convs = row.extra_convs;
  s.loss = row.loss;
  s.augmentation = row.augmentation;
  s.decoder.validate();
  return s;
}

std::string describe_kernels(const std::vector<int>& kernels) {
  if (kernels.empty()) return "--";
  std::string out;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(kernels[i]) + "x" + std::to_string(kernels[i]);
  }
  return out;
}

}  // namespace woundformer
