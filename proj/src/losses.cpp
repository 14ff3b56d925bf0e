#include "woundformer/losses.hpp"

#include <cmath>
#include <string>

#include "woundformer/errors.hpp"

namespace woundformer {

void LossConfig::validate() const {
  if (!(focal_gamma >= 0.0)) throw ConfigError("loss: focal_gamma must be >= 0");
  if (!(dice_smooth > 0.0)) throw ConfigError("loss: dice_smooth must be > 0");
  for (double w : class_weights) {
    if (!(w >= 0.0)) throw ConfigError("loss: class weights must be non-negative");
  }
}

namespace {

struct PixelLayout {
  Index n, k, plane;
};

PixelLayout check_inputs(const Tensor& logits, const IntMask& labels, std::string_view op) {
  if (logits.rank() != 4) throw ShapeError(std::string(op) + ": logits must be [N, K, H, W]");
  const Shape expected{logits.dim(0), logits.dim(2), logits.dim(3)};
  if (labels.shape != expected) {
    throw ShapeError(std::string(op) + ": labels " + to_string(labels.shape) + " do not match logits " +
                     to_string(logits.shape()));
  }
  const Index k = logits.dim(1);
  for (int v : labels.values) {
    if (v < 0 || v >= k) {
      throw ArgumentError(std::string(op) + ": label " + std::to_string(v) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  return {logits.dim(0), k, logits.dim(2) * logits.dim(3)};
}

// Softmax probabilities over the channel axis, same layout as the logits.
std::vector<double> channel_softmax(std::span<const double> z, const PixelLayout& g, std::vector<double>* log_probs) {
  std::vector<double> p(z.size());
  if (log_probs) log_probs->resize(z.size());
  for (Index b = 0; b < g.n; ++b) {
    for (Index px = 0; px < g.plane; ++px) {
      const Index base = b * g.k * g.plane + px;
      double mx = z[base];
      for (Index c = 1; c < g.k; ++c) mx = std::max(mx, z[base + c * g.plane]);
      double total = 0.0;
      for (Index c = 0; c < g.k; ++c) total += std::exp(z[base + c * g.plane] - mx);
      const double lse = mx + std::log(total);
      for (Index c = 0; c < g.k; ++c) {
        const double lp = z[base + c * g.plane] - lse;
        p[base + c * g.plane] = std::exp(lp);
        if (log_probs) (*log_probs)[base + c * g.plane] = lp;
      }
    }
  }
  return p;
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, const IntMask& labels, std::span<const double> class_weights) {
  const PixelLayout g = check_inputs(logits, labels, "cross_entropy");
  if (!class_weights.empty() && static_cast<Index>(class_weights.size()) != g.k) {
    throw ArgumentError("cross_entropy: expected " + std::to_string(g.k) + " class weights");
  }
  std::vector<double> log_probs;
  std::vector<double> probs = channel_softmax(logits.data(), g, &log_probs);
  std::vector<double> pixel_weight(labels.values.size(), 1.0);
  double total = 0.0, weight_sum = 0.0;
  for (Index b = 0; b < g.n; ++b) {
    for (Index px = 0; px < g.plane; ++px) {
      const int y = labels.values[b * g.plane + px];
      const double w = class_weights.empty() ? 1.0 : class_weights[y];
      pixel_weight[b * g.plane + px] = w;
      total += -w * log_probs[(b * g.k + y) * g.plane + px];
      weight_sum += w;
    }
  }
  if (!(weight_sum > 0.0)) throw ArgumentError("cross_entropy: total class weight is zero");
  return make_op_result("cross_entropy", {}, {total / weight_sum}, {logits},
                        [g, labels = labels.values, probs = std::move(probs), pixel_weight = std::move(pixel_weight),
                         weight_sum](detail::Node& self) {
                          auto& dz = self.inputs[0]->grad_buffer();
                          const double scale = self.grad[0] / weight_sum;
                          for (Index b = 0; b < g.n; ++b) {
                            for (Index px = 0; px < g.plane; ++px) {
                              const int y = labels[b * g.plane + px];
                              const double w = pixel_weight[b * g.plane + px] * scale;
                              for (Index c = 0; c < g.k; ++c) {
                                const Index i = (b * g.k + c) * g.plane + px;
                                dz[i] += w * (probs[i] - (c == y ? 1.0 : 0.0));
                              }
                            }
                          }
                        });
}

Tensor focal_dice(const Tensor& logits, const IntMask& labels, double gamma, double smooth) {
  const PixelLayout g = check_inputs(logits, labels, "focal_dice");
  if (!(gamma >= 0.0) || !(smooth > 0.0)) throw ArgumentError("focal_dice: need gamma >= 0 and smooth > 0");
  std::vector<double> log_probs;
  std::vector<double> probs = channel_softmax(logits.data(), g, &log_probs);
  const double pixels = static_cast<double>(g.n * g.plane);

  double focal = 0.0;
  std::vector<double> inter(static_cast<std::size_t>(g.k), 0.0), denom(static_cast<std::size_t>(g.k), smooth);
  for (Index b = 0; b < g.n; ++b) {
    for (Index px = 0; px < g.plane; ++px) {
      const int y = labels.values[b * g.plane + px];
      const Index it = (b * g.k + y) * g.plane + px;
      focal += -std::pow(1.0 - probs[it], gamma) * log_probs[it];
      for (Index c = 0; c < g.k; ++c) {
        const double p = probs[(b * g.k + c) * g.plane + px];
        denom[c] += p;
        if (c == y) {
          inter[c] += p;
          denom[c] += 1.0;
        }
      }
    }
  }
  double dice_mean = 0.0;
  for (Index c = 0; c < g.k; ++c) dice_mean += (2.0 * inter[c] + smooth) / denom[c];
  dice_mean /= static_cast<double>(g.k);
  const double value = focal / pixels + (1.0 - dice_mean);

  return make_op_result(
      "focal_dice", {}, {value}, {logits},
      [g, gamma, smooth, pixels, labels = labels.values, probs = std::move(probs), log_probs = std::move(log_probs),
       inter = std::move(inter), denom = std::move(denom)](detail::Node& self) {
        auto& dz = self.inputs[0]->grad_buffer();
        const double seed = self.grad[0];
        std::vector<double> dp(static_cast<std::size_t>(g.k));
        for (Index b = 0; b < g.n; ++b) {
          for (Index px = 0; px < g.plane; ++px) {
            const int y = labels[b * g.plane + px];
            const Index it = (b * g.k + y) * g.plane + px;
            const double pt = probs[it];
            const double lt = log_probs[it];
            // d focal / d log p_t
            const double one_minus = 1.0 - pt;
            double dl = -std::pow(one_minus, gamma);
            if (gamma > 0.0 && one_minus > 0.0) dl += gamma * std::pow(one_minus, gamma - 1.0) * pt * lt;
            dl /= pixels;

            // d dice / d p_c at this pixel
            double weighted = 0.0;
            for (Index c = 0; c < g.k; ++c) {
              const double yc = c == y ? 1.0 : 0.0;
              const double d = denom[c];
              dp[c] = -(2.0 * yc * d - (2.0 * inter[c] + smooth)) / (d * d) / static_cast<double>(g.k);
              weighted += dp[c] * probs[(b * g.k + c) * g.plane + px];
            }
            for (Index c = 0; c < g.k; ++c) {
              const Index i = (b * g.k + c) * g.plane + px;
              const double focal_part = dl * ((c == y ? 1.0 : 0.0) - probs[i]);
              const double dice_part = probs[i] * (dp[c] - weighted);
              dz[i] += seed * (focal_part + dice_part);
            }
          }
        }
      });
}

Tensor compute_loss(const Tensor& logits, const IntMask& labels, const LossConfig& config) {
  switch (config.kind) {
    case LossKind::cross_entropy: return cross_entropy(logits, labels, config.class_weights);
    case LossKind::focal_dice: return focal_dice(logits, labels, config.focal_gamma, config.dice_smooth);
  }
  throw ArgumentError("unknown loss kind");
}

}  // namespace woundformer
