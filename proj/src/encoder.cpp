#include "woundformer/encoder.hpp"

#include <cmath>
#include <string>

#include "woundformer/errors.hpp"

namespace woundformer {

EncoderConfig EncoderConfig::micro() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::b5_shape() {
  EncoderConfig c;
  c.channels = {64, 128, 320, 512};
  c.heads = {1, 2, 5, 8};
  return c;
}

void EncoderConfig::validate() const {
  if (in_channels < 1 || ffn_expansion < 1) throw ConfigError("encoder: non-positive width");
  for (int i = 0; i < 4; ++i) {
    const auto s = std::to_string(i + 1);
    if (channels[i] < 1 || depths[i] < 0 || heads[i] < 1 || sr_ratios[i] < 1) {
      throw ConfigError("encoder stage " + s + ": non-positive setting");
    }
    if (channels[i] % heads[i] != 0) {
      throw ConfigError("encoder stage " + s + ": channels not divisible by heads");
    }
    if (patch_kernels[i] < 1 || patch_strides[i] < 1) throw ConfigError("encoder stage " + s + ": bad patch");
  }
  if (cumulative_stride(3) != 32 || patch_strides[0] != 4) {
    throw ConfigError("encoder: patch strides must reduce by 4, 8, 16, 32");
  }
}

Index EncoderConfig::cumulative_stride(int stage) const {
  Index s = 1;
  for (int i = 0; i <= stage; ++i) s *= patch_strides[i];
  return s;
}

StageArray FeaturePyramid::channels() const {
  return {levels[0].dim(1), levels[1].dim(1), levels[2].dim(1), levels[3].dim(1)};
}

// ---------------------------------------------------------------------------

OverlapPatchEmbed OverlapPatchEmbed::create(Index in_channels, Index out_channels, int kernel, int stride,
                                            Rng& rng) {
  return {Conv2d::create(in_channels, out_channels, kernel, stride, kernel / 2, rng), LayerNorm::create(out_channels)};
}

Tensor OverlapPatchEmbed::operator()(const Tensor& x, Index& out_h, Index& out_w) const {
  if (x.rank() != 4) throw ShapeError("patch embed: expected [N, C, H, W], got " + to_string(x.shape()));
  const Index stride = proj.stride;
  if (x.dim(2) % stride != 0 || x.dim(3) % stride != 0) {
    throw ShapeError("patch embed: extent " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                     " not divisible by stride " + std::to_string(stride));
  }
  Tensor y = proj(x);
  out_h = y.dim(2);
  out_w = y.dim(3);
  return norm(map_to_tokens(y));
}

void OverlapPatchEmbed::collect(const std::string& prefix, ParameterSet& out) const {
  proj.collect(prefix + ".proj", out);
  norm.collect(prefix + ".norm", out);
}

EfficientSelfAttention EfficientSelfAttention::create(Index channels, Index heads, Index sr_ratio, Rng& rng) {
  EfficientSelfAttention a;
  a.query = Linear::create(channels, channels, rng);
  a.key = Linear::create(channels, channels, rng);
  a.value = Linear::create(channels, channels, rng);
  a.proj = Linear::create(channels, channels, rng);
  if (sr_ratio > 1) {
    a.reduce = Conv2d::create(channels, channels, static_cast<int>(sr_ratio), static_cast<int>(sr_ratio), 0, rng);
    a.reduce_norm = LayerNorm::create(channels);
  }
  a.heads = heads;
  a.sr_ratio = sr_ratio;
  return a;
}

Tensor EfficientSelfAttention::operator()(const Tensor& x, Index height, Index width) const {
  if (x.rank() != 3) throw ShapeError("attention: expected [N, L, C], got " + to_string(x.shape()));
  const Index n = x.dim(0), tokens = x.dim(1), c = x.dim(2);
  if (tokens != height * width) {
    throw ShapeError("attention: " + std::to_string(tokens) + " tokens for a " + std::to_string(height) + "x" +
                     std::to_string(width) + " grid");
  }
  if (height % sr_ratio != 0 || width % sr_ratio != 0) {
    throw ShapeError("attention: reduction ratio " + std::to_string(sr_ratio) + " does not divide " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  if (c % heads != 0) throw ShapeError("attention: channels not divisible by heads");
  const Index d = c / heads;

  const auto split_heads = [&](const Tensor& t) {
    return permute(reshape(t, {n, t.dim(1), heads, d}), {0, 2, 1, 3});
  };

  Tensor context = x;
  if (reduce) {
    context = (*reduce_norm)(map_to_tokens((*reduce)(tokens_to_map(x, height, width))));
  }
  const Tensor q = split_heads(query(x));
  const Tensor k = split_heads(key(context));
  const Tensor v = split_heads(value(context));
  const Tensor attn = softmax(scale(matmul(q, k, true), 1.0 / std::sqrt(static_cast<double>(d))), -1);
  const Tensor merged = reshape(permute(matmul(attn, v), {0, 2, 1, 3}), {n, tokens, c});
  return proj(merged);
}

void EfficientSelfAttention::collect(const std::string& prefix, ParameterSet& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  proj.collect(prefix + ".proj", out);
  if (reduce) {
    reduce->collect(prefix + ".reduce", out);
    reduce_norm->collect(prefix + ".reduce_norm", out);
  }
}

MixFfn MixFfn::create(Index channels, Index expansion, Rng& rng) {
  const Index hidden = channels * expansion;
  MixFfn f;
  f.fc1 = Linear::create(channels, hidden, rng);
  f.depthwise = Conv2d::create(hidden, hidden, 3, 1, 1, rng, static_cast<int>(hidden));
  f.fc2 = Linear::create(hidden, channels, rng);
  return f;
}

Tensor MixFfn::operator()(const Tensor& x, Index height, Index width) const {
  if (x.rank() != 3 || x.dim(1) != height * width) {
    throw ShapeError("mix-ffn: token count of " + to_string(x.shape()) + " does not match " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  Tensor h = fc1(x);
  h = map_to_tokens(depthwise(tokens_to_map(h, height, width)));
  return fc2(gelu(h));
}

void MixFfn::collect(const std::string& prefix, ParameterSet& out) const {
  fc1.collect(prefix + ".fc1", out);
  depthwise.collect(prefix + ".depthwise", out);
  fc2.collect(prefix + ".fc2", out);
}

Tensor TransformerBlock::operator()(const Tensor& x, Index height, Index width) const {
  Tensor y = add(x, attention(norm1(x), height, width));
  return add(y, ffn(norm2(y), height, width));
}

void TransformerBlock::collect(const std::string& prefix, ParameterSet& out) const {
  norm1.collect(prefix + ".norm1", out);
  attention.collect(prefix + ".attention", out);
  norm2.collect(prefix + ".norm2", out);
  ffn.collect(prefix + ".ffn", out);
}

// ---------------------------------------------------------------------------

MixTransformer::MixTransformer(const EncoderConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  Index in = config_.in_channels;
  for (int i = 0; i < 4; ++i) {
    const Index c = config_.channels[i];
    EncoderStage& s = stages_[i];
    s.embed = OverlapPatchEmbed::create(in, c, static_cast<int>(config_.patch_kernels[i]),
                                        static_cast<int>(config_.patch_strides[i]), rng);
    for (Index b = 0; b < config_.depths[i]; ++b) {
      TransformerBlock block;
      block.norm1 = LayerNorm::create(c);
      block.attention = EfficientSelfAttention::create(c, config_.heads[i], config_.sr_ratios[i], rng);
      block.norm2 = LayerNorm::create(c);
      block.ffn = MixFfn::create(c, config_.ffn_expansion, rng);
      s.blocks.push_back(std::move(block));
    }
    s.norm = LayerNorm::create(c);
    in = c;
  }
}

FeaturePyramid MixTransformer::forward(const Tensor& image) const {
  if (image.rank() != 4 || image.dim(1) != config_.in_channels) {
    throw ShapeError("encoder: expected [N, " + std::to_string(config_.in_channels) + ", H, W], got " +
                     to_string(image.shape()));
  }
  if (image.dim(2) % 32 != 0 || image.dim(3) % 32 != 0) {
    throw ShapeError("encoder: input extent " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)) +
                     " is not divisible by 32");
  }
  FeaturePyramid pyramid;
  Tensor x = image;
  for (int i = 0; i < 4; ++i) {
    const EncoderStage& s = stages_[i];
    Index h = 0, w = 0;
    Tensor tokens = s.embed(x, h, w);
    for (const auto& block : s.blocks) tokens = block(tokens, h, w);
    x = tokens_to_map(s.norm(tokens), h, w);
    pyramid.levels[i] = x;
  }
  return pyramid;
}

void MixTransformer::collect(const std::string& prefix, ParameterSet& out) const {
  for (int i = 0; i < 4; ++i) {
    const std::string p = prefix + ".stage" + std::to_string(i + 1);
    stages_[i].embed.collect(p + ".embed", out);
    for (std::size_t b = 0; b < stages_[i].blocks.size(); ++b) {
      stages_[i].blocks[b].collect(p + ".block" + std::to_string(b), out);
    }
    stages_[i].norm.collect(p + ".norm", out);
  }
}

// ---------------------------------------------------------------------------

Index encoder_parameter_count(const EncoderConfig& config) {
  Index total = 0;
  Index in = config.in_channels;
  for (int i = 0; i < 4; ++i) {
    const Index c = config.channels[i];
    const Index k = config.patch_kernels[i];
    const Index hidden = c * config.ffn_expansion;
    const Index sr = config.sr_ratios[i];
    total += in * c * k * k + c + 2 * c;

    Index block = 2 * c + 4 * (c * c + c) + 2 * c;
    if (sr > 1) block += c * c * sr * sr + c + 2 * c;
    block += c * hidden + hidden;  // fc1
    block += hidden * 9 + hidden;  // depthwise 3x3
    block += hidden * c + c;       // fc2
    total += config.depths[i] * block;

    total += 2 * c;
    in = c;
  }
  return total;
}

double encoder_flops(const EncoderConfig& config, Index height, Index width) {
  double total = 0.0;
  Index in = config.in_channels;
  Index h = height, w = width;
  for (int i = 0; i < 4; ++i) {
    const double c = static_cast<double>(config.channels[i]);
    const double k = static_cast<double>(config.patch_kernels[i]);
    h /= config.patch_strides[i];
    w /= config.patch_strides[i];
    const double tokens = static_cast<double>(h * w);
    const double sr = static_cast<double>(config.sr_ratios[i]);
    const double reduced = tokens / (sr * sr);
    const double hidden = c * static_cast<double>(config.ffn_expansion);
    total += 2.0 * static_cast<double>(in) * k * k * c * tokens;

    double block = 2.0 * tokens * c * c;              // query
    if (config.sr_ratios[i] > 1) block += 2.0 * c * c * sr * sr * reduced;
    block += 2.0 * 2.0 * reduced * c * c;            // key, value
    block += 2.0 * 2.0 * tokens * reduced * c;       // scores and weighted sum
    block += 2.0 * tokens * c * c;                   // output projection
    block += 2.0 * tokens * c * hidden * 2.0;        // fc1 + fc2
    block += 2.0 * tokens * hidden * 9.0;            // depthwise
    total += static_cast<double>(config.depths[i]) * block;
    in = config.channels[i];
  }
  return total;
}

}  // namespace woundformer
