#include "woundformer/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "woundformer/errors.hpp"

namespace woundformer {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

using detail::Node;

void require_rank(const Tensor& t, int rank, std::string_view op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

bool wants_grad(const Node& out, std::size_t i) {
  return i < out.inputs.size() && out.inputs[i] && out.inputs[i]->requires_grad;
}

std::vector<double>& input_grad(Node& out, std::size_t i) { return out.inputs[i]->grad_buffer(); }

template <class F>
Tensor unary_map(const Tensor& x, std::string_view op, F forward_fn, double (*derivative)(double, double)) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = forward_fn(v);
  return make_op_result(op, x.shape(), std::move(out), {x}, [derivative](Node& self) {
    if (!wants_grad(self, 0)) return;
    const auto& in = self.inputs[0]->value;
    auto& g = input_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * derivative(in[i], self.value[i]);
  });
}

double relu_derivative(double x, double) { return x > 0.0 ? 1.0 : 0.0; }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double gelu_derivative(double x, double) {
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return normal_cdf(x) + x * pdf;
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
  }
  return "none";
}

Activation parse_activation(std::string_view name) {
  if (name == "none") return Activation::none;
  if (name == "relu") return Activation::relu;
  if (name == "gelu") return Activation::gelu;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_op_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants_grad(self, k)) continue;
      auto& g = input_grad(self, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_op_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (wants_grad(self, 0)) {
      auto& g = input_grad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (wants_grad(self, 1)) {
      auto& g = input_grad(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= factor;
  return make_op_result("scale", x.shape(), std::move(out), {x}, [factor](Node& self) {
    if (!wants_grad(self, 0)) return;
    auto& g = input_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  return unary_map(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, relu_derivative);
}

Tensor gelu(const Tensor& x) {
  return unary_map(x, "gelu", [](double v) { return v * normal_cdf(v); }, gelu_derivative);
}

Tensor activation(const Tensor& x, Activation kind) {
  switch (kind) {
    case Activation::relu: return relu(x);
    case Activation::gelu: return gelu(x);
    case Activation::none: return x;
  }
  return x;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_op_result("sum", {}, {total}, {x}, [](Node& self) {
    if (!wants_grad(self, 0)) return;
    auto& g = input_grad(self, 0);
    for (double& v : g) v += self.grad[0];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_op_result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    if (!wants_grad(self, 0)) return;
    auto& g = input_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, std::initializer_list<int> order) {
  return permute(x, std::span<const int>(order.begin(), order.size()));
}

Tensor permute(const Tensor& x, std::span<const int> order) {
  const int r = x.rank();
  if (static_cast<int>(order.size()) != r) throw ShapeError("permute: order rank mismatch");
  std::vector<bool> used(static_cast<std::size_t>(r), false);
  for (int a : order) {
    if (a < 0 || a >= r || used[static_cast<std::size_t>(a)]) throw ShapeError("permute: invalid order");
    used[static_cast<std::size_t>(a)] = true;
  }
  const Shape& in_shape = x.shape();
  std::vector<Index> in_strides(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<Index> src_strides(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    out_shape[i] = in_shape[order[i]];
    src_strides[i] = in_strides[order[i]];
  }

  // offsets[k] = flat input index feeding flat output index k
  const Index n = x.size();
  std::vector<Index> offsets(static_cast<std::size_t>(n));
  std::vector<Index> counter(static_cast<std::size_t>(r), 0);
  Index src = 0;
  for (Index k = 0; k < n; ++k) {
    offsets[k] = src;
    for (int ax = r - 1; ax >= 0; --ax) {
      if (++counter[ax] < out_shape[ax]) {
        src += src_strides[ax];
        break;
      }
      src -= src_strides[ax] * (out_shape[ax] - 1);
      counter[ax] = 0;
    }
  }
  const auto xv = x.data();
  std::vector<double> out(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) out[k] = xv[offsets[k]];
  return make_op_result("permute", std::move(out_shape), std::move(out), {x},
                        [offsets = std::move(offsets)](Node& self) {
                          if (!wants_grad(self, 0)) return;
                          auto& g = input_grad(self, 0);
                          for (std::size_t k = 0; k < offsets.size(); ++k) g[offsets[k]] += self.grad[k];
                        });
}

Tensor map_to_tokens(const Tensor& x) {
  require_rank(x, 4, "map_to_tokens");
  const Shape& s = x.shape();
  return reshape(permute(x, {0, 2, 3, 1}), {s[0], s[2] * s[3], s[1]});
}

Tensor tokens_to_map(const Tensor& x, Index height, Index width) {
  require_rank(x, 3, "tokens_to_map");
  const Shape& s = x.shape();
  if (s[1] != height * width) {
    throw ShapeError("tokens_to_map: " + std::to_string(s[1]) + " tokens cannot form a " +
                     std::to_string(height) + "x" + std::to_string(width) + " map");
  }
  return permute(reshape(x, {s[0], height, width, s[2]}), {0, 3, 1, 2});
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeometry {
  Index n, cin, h, w, cout, kh, kw, ho, wo, cin_per_group, cout_per_group;
  int stride, padding, groups;

  // Output columns [lo, hi) whose input column for tap kx is in range.
  std::pair<Index, Index> valid_range(Index k, Index in_extent, Index out_extent) const {
    Index lo = 0;
    while (lo < out_extent && lo * stride + k - padding < 0) ++lo;
    Index hi = out_extent;
    while (hi > lo && (hi - 1) * stride + k - padding >= in_extent) --hi;
    return {lo, hi};
  }
};

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding,
              int groups) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (stride < 1 || padding < 0 || groups < 1) throw ArgumentError("conv2d: invalid stride/padding/groups");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.padding = padding;
  g.groups = groups;
  if (g.cin % groups != 0 || g.cout % groups != 0) throw ShapeError("conv2d: channels not divisible by groups");
  g.cin_per_group = g.cin / groups;
  g.cout_per_group = g.cout / groups;
  if (weight.dim(1) != g.cin_per_group) {
    throw ShapeError("conv2d: input has " + std::to_string(g.cin) + " channels but weight expects " +
                     std::to_string(weight.dim(1) * groups));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
    throw ShapeError("conv2d: bias shape " + to_string(bias.shape()) + " does not match Cout");
  }
  const Index num_h = g.h + 2 * padding - g.kh;
  const Index num_w = g.w + 2 * padding - g.kw;
  if (num_h < 0 || num_w < 0) {
    throw ShapeError("conv2d: non-positive output extent for input " + to_string(input.shape()));
  }
  g.ho = num_h / stride + 1;
  g.wo = num_w / stride + 1;

  const auto x = input.data();
  const auto wt = weight.data();
  const Index in_plane = g.h * g.w;
  const Index out_plane = g.ho * g.wo;
  const Index ktaps = g.kh * g.kw;
  std::vector<double> out(static_cast<std::size_t>(g.n * g.cout * out_plane), 0.0);

  for (Index n = 0; n < g.n; ++n) {
    for (Index co = 0; co < g.cout; ++co) {
      double* o = out.data() + (n * g.cout + co) * out_plane;
      if (bias.defined()) std::fill(o, o + out_plane, bias.data()[co]);
      const Index grp = co / g.cout_per_group;
      for (Index cl = 0; cl < g.cin_per_group; ++cl) {
        const double* xi = x.data() + (n * g.cin + grp * g.cin_per_group + cl) * in_plane;
        const double* wk = wt.data() + (co * g.cin_per_group + cl) * ktaps;
        for (Index ky = 0; ky < g.kh; ++ky) {
          const auto [oy0, oy1] = g.valid_range(ky, g.h, g.ho);
          for (Index kx = 0; kx < g.kw; ++kx) {
            const auto [ox0, ox1] = g.valid_range(kx, g.w, g.wo);
            const double wv = wk[ky * g.kw + kx];
            for (Index oy = oy0; oy < oy1; ++oy) {
              const double* row = xi + (oy * stride + ky - padding) * g.w + kx - padding;
              double* orow = o + oy * g.wo;
              if (stride == 1) {
                for (Index ox = ox0; ox < ox1; ++ox) orow[ox] += wv * row[ox];
              } else {
                for (Index ox = ox0; ox < ox1; ++ox) orow[ox] += wv * row[ox * stride];
              }
            }
          }
        }
      }
    }
  }

  const double flops = 2.0 * static_cast<double>(g.n * g.cout * out_plane * g.cin_per_group * ktaps);
  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op_result(
      "conv2d", {g.n, g.cout, g.ho, g.wo}, std::move(out), inputs,
      [g, in_plane, out_plane, ktaps](Node& self) {
        const auto& x = self.inputs[0]->value;
        const auto& wt = self.inputs[1]->value;
        const auto& dy = self.grad;
        const bool need_x = wants_grad(self, 0);
        const bool need_w = wants_grad(self, 1);
        const bool need_b = wants_grad(self, 2);
        std::vector<double>* dx = need_x ? &input_grad(self, 0) : nullptr;
        std::vector<double>* dw = need_w ? &input_grad(self, 1) : nullptr;
        std::vector<double>* db = need_b ? &input_grad(self, 2) : nullptr;
        const int stride = g.stride;
        const int padding = g.padding;
        for (Index n = 0; n < g.n; ++n) {
          for (Index co = 0; co < g.cout; ++co) {
            const double* go = dy.data() + (n * g.cout + co) * out_plane;
            if (db) {
              double s = 0.0;
              for (Index i = 0; i < out_plane; ++i) s += go[i];
              (*db)[co] += s;
            }
            const Index grp = co / g.cout_per_group;
            for (Index cl = 0; cl < g.cin_per_group; ++cl) {
              const Index xoff = (n * g.cin + grp * g.cin_per_group + cl) * in_plane;
              const Index woff = (co * g.cin_per_group + cl) * ktaps;
              for (Index ky = 0; ky < g.kh; ++ky) {
                const auto [oy0, oy1] = g.valid_range(ky, g.h, g.ho);
                for (Index kx = 0; kx < g.kw; ++kx) {
                  const auto [ox0, ox1] = g.valid_range(kx, g.w, g.wo);
                  const double wv = wt[woff + ky * g.kw + kx];
                  double acc = 0.0;
                  for (Index oy = oy0; oy < oy1; ++oy) {
                    const Index base = xoff + (oy * stride + ky - padding) * g.w + kx - padding;
                    const double* grow = go + oy * g.wo;
                    if (dx) {
                      double* dxr = dx->data() + base;
                      for (Index ox = ox0; ox < ox1; ++ox) dxr[ox * stride] += wv * grow[ox];
                    }
                    if (dw) {
                      const double* xr = x.data() + base;
                      for (Index ox = ox0; ox < ox1; ++ox) acc += grow[ox] * xr[ox * stride];
                    }
                  }
                  if (dw) (*dw)[woff + ky * g.kw + kx] += acc;
                }
              }
            }
          }
        }
      },
      flops);
}

// ---------------------------------------------------------------------------
// Normalisation

BatchNormStats BatchNormStats::identity(Index channels) {
  return {Tensor::zeros({channels}), Tensor::full({channels}, 1.0)};
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                  Mode mode, double eps, double momentum) {
  require_rank(input, 4, "batch_norm");
  const Index n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (gamma.size() != c || beta.size() != c || stats.running_mean.size() != c ||
      stats.running_var.size() != c) {
    throw ShapeError("batch_norm: parameter length does not match " + std::to_string(c) + " channels");
  }
  if (!(eps > 0.0)) throw ArgumentError("batch_norm: eps must be positive");
  const Index count = n * plane;
  const auto x = input.data();
  std::vector<double> mean(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));

  if (mode == Mode::train) {
    auto rm = stats.running_mean.mutable_data();
    auto rv = stats.running_var.mutable_data();
    for (Index ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (Index b = 0; b < n; ++b) {
        const double* p = x.data() + (b * c + ch) * plane;
        for (Index i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (Index b = 0; b < n; ++b) {
        const double* p = x.data() + (b * c + ch) * plane;
        for (Index i = 0; i < plane; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      const double var = ss / static_cast<double>(count);
      mean[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(var + eps);
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      rm[ch] = (1.0 - momentum) * rm[ch] + momentum * mu;
      rv[ch] = (1.0 - momentum) * rv[ch] + momentum * unbiased;
    }
  } else {
    const auto rm = stats.running_mean.data();
    const auto rv = stats.running_var.data();
    for (Index ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      inv_std[ch] = 1.0 / std::sqrt(rv[ch] + eps);
    }
  }

  const auto gv = gamma.data();
  const auto bv = beta.data();
  std::vector<double> xhat(x.size()), out(x.size());
  for (Index b = 0; b < n; ++b) {
    for (Index ch = 0; ch < c; ++ch) {
      const Index off = (b * c + ch) * plane;
      for (Index i = 0; i < plane; ++i) {
        xhat[off + i] = (x[off + i] - mean[ch]) * inv_std[ch];
        out[off + i] = gv[ch] * xhat[off + i] + bv[ch];
      }
    }
  }

  return make_op_result(
      "batch_norm", input.shape(), std::move(out), {input, gamma, beta},
      [n, c, plane, count, mode, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& self) {
        const auto& dy = self.grad;
        const auto& gv = self.inputs[1]->value;
        std::vector<double> sum_dy(static_cast<std::size_t>(c), 0.0), sum_dy_xhat(static_cast<std::size_t>(c), 0.0);
        for (Index b = 0; b < n; ++b) {
          for (Index ch = 0; ch < c; ++ch) {
            const Index off = (b * c + ch) * plane;
            for (Index i = 0; i < plane; ++i) {
              sum_dy[ch] += dy[off + i];
              sum_dy_xhat[ch] += dy[off + i] * xhat[off + i];
            }
          }
        }
        if (wants_grad(self, 1)) {
          auto& g = input_grad(self, 1);
          for (Index ch = 0; ch < c; ++ch) g[ch] += sum_dy_xhat[ch];
        }
        if (wants_grad(self, 2)) {
          auto& g = input_grad(self, 2);
          for (Index ch = 0; ch < c; ++ch) g[ch] += sum_dy[ch];
        }
        if (!wants_grad(self, 0)) return;
        auto& dx = input_grad(self, 0);
        const double m = static_cast<double>(count);
        for (Index b = 0; b < n; ++b) {
          for (Index ch = 0; ch < c; ++ch) {
            const Index off = (b * c + ch) * plane;
            const double k = gv[ch] * inv_std[ch];
            for (Index i = 0; i < plane; ++i) {
              if (mode == Mode::train) {
                dx[off + i] += k * (dy[off + i] - sum_dy[ch] / m - xhat[off + i] * sum_dy_xhat[ch] / m);
              } else {
                dx[off + i] += k * dy[off + i];
              }
            }
          }
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const Index d = x.dim(-1);
  if (gamma.size() != d || beta.size() != d) {
    throw ShapeError("layer_norm: affine length does not match last axis of " + to_string(x.shape()));
  }
  const Index rows = x.size() / std::max<Index>(d, 1);
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  std::vector<double> xhat(xv.size()), out(xv.size()), inv_std(static_cast<std::size_t>(rows));
  for (Index r = 0; r < rows; ++r) {
    const double* p = xv.data() + r * d;
    double mu = 0.0;
    for (Index i = 0; i < d; ++i) mu += p[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (Index i = 0; i < d; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (Index i = 0; i < d; ++i) {
      xhat[r * d + i] = (p[i] - mu) * inv_std[r];
      out[r * d + i] = gv[i] * xhat[r * d + i] + bv[i];
    }
  }
  return make_op_result(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const auto& dy = self.grad;
        const auto& gv = self.inputs[1]->value;
        if (wants_grad(self, 1) || wants_grad(self, 2)) {
          std::vector<double> dg(static_cast<std::size_t>(d), 0.0), dbeta(static_cast<std::size_t>(d), 0.0);
          for (Index r = 0; r < rows; ++r) {
            for (Index i = 0; i < d; ++i) {
              dg[i] += dy[r * d + i] * xhat[r * d + i];
              dbeta[i] += dy[r * d + i];
            }
          }
          if (wants_grad(self, 1)) {
            auto& g = input_grad(self, 1);
            for (Index i = 0; i < d; ++i) g[i] += dg[i];
          }
          if (wants_grad(self, 2)) {
            auto& g = input_grad(self, 2);
            for (Index i = 0; i < d; ++i) g[i] += dbeta[i];
          }
        }
        if (!wants_grad(self, 0)) return;
        auto& dx = input_grad(self, 0);
        const double m = static_cast<double>(d);
        for (Index r = 0; r < rows; ++r) {
          double s1 = 0.0, s2 = 0.0;
          for (Index i = 0; i < d; ++i) {
            const double dxh = dy[r * d + i] * gv[i];
            s1 += dxh;
            s2 += dxh * xhat[r * d + i];
          }
          for (Index i = 0; i < d; ++i) {
            const double dxh = dy[r * d + i] * gv[i];
            dx[r * d + i] += inv_std[r] * (dxh - s1 / m - xhat[r * d + i] * s2 / m);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Resampling and channel concat

namespace {

struct Tap {
  Index lo, hi;
  double frac;
};

std::vector<Tap> half_pixel_taps(Index in, Index out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (Index i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    Index lo = static_cast<Index>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const Index hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& input, Index out_h, Index out_w) {
  require_rank(input, 4, "bilinear_upsample");
  const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (out_h < h || out_w < w) {
    throw ArgumentError("bilinear_upsample: cannot downsample " + to_string(input.shape()) + " to " +
                        std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  const auto ty = half_pixel_taps(h, out_h);
  const auto tx = half_pixel_taps(w, out_w);
  const auto x = input.data();
  std::vector<double> out(static_cast<std::size_t>(n * c * out_h * out_w));
  for (Index p = 0; p < n * c; ++p) {
    const double* src = x.data() + p * h * w;
    double* dst = out.data() + p * out_h * out_w;
    for (Index oy = 0; oy < out_h; ++oy) {
      const Tap& a = ty[oy];
      for (Index ox = 0; ox < out_w; ++ox) {
        const Tap& b = tx[ox];
        const double top = (1.0 - b.frac) * src[a.lo * w + b.lo] + b.frac * src[a.lo * w + b.hi];
        const double bot = (1.0 - b.frac) * src[a.hi * w + b.lo] + b.frac * src[a.hi * w + b.hi];
        dst[oy * out_w + ox] = (1.0 - a.frac) * top + a.frac * bot;
      }
    }
  }
  return make_op_result("bilinear_upsample", {n, c, out_h, out_w}, std::move(out), {input},
                        [n, c, h, w, out_h, out_w, ty, tx](Node& self) {
                          if (!wants_grad(self, 0)) return;
                          auto& g = input_grad(self, 0);
                          for (Index p = 0; p < n * c; ++p) {
                            double* dst = g.data() + p * h * w;
                            const double* dy = self.grad.data() + p * out_h * out_w;
                            for (Index oy = 0; oy < out_h; ++oy) {
                              const Tap& a = ty[oy];
                              for (Index ox = 0; ox < out_w; ++ox) {
                                const Tap& b = tx[ox];
                                const double v = dy[oy * out_w + ox];
                                dst[a.lo * w + b.lo] += v * (1.0 - a.frac) * (1.0 - b.frac);
                                dst[a.lo * w + b.hi] += v * (1.0 - a.frac) * b.frac;
                                dst[a.hi * w + b.lo] += v * a.frac * (1.0 - b.frac);
                                dst[a.hi * w + b.hi] += v * a.frac * b.frac;
                              }
                            }
                          }
                        });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) { return concat_channels(std::vector<Tensor>{a, b}); }

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ArgumentError("concat_channels: nothing to concatenate");
  for (const Tensor& t : parts) require_rank(t, 4, "concat_channels");
  const Index n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  Index total = 0;
  std::vector<Index> channels;
  for (const Tensor& t : parts) {
    if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w) {
      throw ShapeError("concat_channels: " + to_string(t.shape()) + " does not match " +
                       to_string(parts[0].shape()) + " outside the channel axis");
    }
    channels.push_back(t.dim(1));
    total += t.dim(1);
  }
  const Index plane = h * w;
  std::vector<double> out(static_cast<std::size_t>(n * total * plane));
  for (Index b = 0; b < n; ++b) {
    Index c0 = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto src = parts[k].data();
      const Index len = channels[k] * plane;
      std::copy_n(src.data() + b * len, len, out.data() + (b * total + c0) * plane);
      c0 += channels[k];
    }
  }
  return make_op_result("concat_channels", {n, total, h, w}, std::move(out), parts,
                        [n, total, plane, channels](Node& self) {
                          Index c0 = 0;
                          for (std::size_t k = 0; k < channels.size(); ++k) {
                            const Index len = channels[k] * plane;
                            if (wants_grad(self, k)) {
                              auto& g = input_grad(self, k);
                              for (Index b = 0; b < n; ++b) {
                                const double* src = self.grad.data() + (b * total + c0) * plane;
                                double* dst = g.data() + b * len;
                                for (Index i = 0; i < len; ++i) dst[i] += src[i];
                              }
                            }
                            c0 += channels[k];
                          }
                        });
}

// ---------------------------------------------------------------------------
// Dense algebra

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() < 2 || b.rank() != a.rank()) {
    throw ShapeError("matmul: incompatible ranks " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const int r = a.rank();
  Index batch = 1;
  for (int i = 0; i < r - 2; ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw ShapeError("matmul: batch axes differ " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    batch *= a.dim(i);
  }
  const Index m = a.dim(-2), k = a.dim(-1);
  const Index bk = transpose_b ? b.dim(-1) : b.dim(-2);
  const Index ncols = transpose_b ? b.dim(-2) : b.dim(-1);
  if (bk != k) {
    throw ShapeError("matmul: inner extents differ " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(ncols);
  std::vector<double> out(static_cast<std::size_t>(batch * m * ncols));
  const auto av = a.data();
  const auto bv = b.data();
  const Index b_rows = transpose_b ? ncols : k;
  const Index b_cols = transpose_b ? k : ncols;
  for (Index i = 0; i < batch; ++i) {
    ConstMap A(av.data() + i * m * k, m, k);
    ConstMap B(bv.data() + i * k * ncols, b_rows, b_cols);
    MutMap C(out.data() + i * m * ncols, m, ncols);
    if (transpose_b) {
      C.noalias() = A * B.transpose();
    } else {
      C.noalias() = A * B;
    }
  }
  const double flops = 2.0 * static_cast<double>(batch * m * k * ncols);
  return make_op_result(
      "matmul", std::move(out_shape), std::move(out), {a, b},
      [batch, m, k, ncols, b_rows, b_cols, transpose_b](Node& self) {
        const auto& av = self.inputs[0]->value;
        const auto& bv = self.inputs[1]->value;
        const bool need_a = wants_grad(self, 0), need_b = wants_grad(self, 1);
        for (Index i = 0; i < batch; ++i) {
          ConstMap dC(self.grad.data() + i * m * ncols, m, ncols);
          ConstMap A(av.data() + i * m * k, m, k);
          ConstMap B(bv.data() + i * k * ncols, b_rows, b_cols);
          if (need_a) {
            MutMap dA(input_grad(self, 0).data() + i * m * k, m, k);
            if (transpose_b) {
              dA.noalias() += dC * B;
            } else {
              dA.noalias() += dC * B.transpose();
            }
          }
          if (need_b) {
            MutMap dB(input_grad(self, 1).data() + i * k * ncols, b_rows, b_cols);
            if (transpose_b) {
              dB.noalias() += dC.transpose() * A;
            } else {
              dB.noalias() += A.transpose() * dC;
            }
          }
        }
      },
      flops);
}

Tensor softmax(const Tensor& x, int axis) {
  const int r = x.rank();
  const int ax = axis < 0 ? axis + r : axis;
  if (ax < 0 || ax >= r) throw ShapeError("softmax: axis out of range for " + to_string(x.shape()));
  const Index len = x.dim(ax);
  Index outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.dim(i);
  for (int i = ax + 1; i < r; ++i) inner *= x.dim(i);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (Index o = 0; o < outer; ++o) {
    for (Index in = 0; in < inner; ++in) {
      const Index base = o * len * inner + in;
      double mx = xv[base];
      for (Index j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      double total = 0.0;
      for (Index j = 0; j < len; ++j) {
        out[base + j * inner] = std::exp(xv[base + j * inner] - mx);
        total += out[base + j * inner];
      }
      for (Index j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  return make_op_result("softmax", x.shape(), std::move(out), {x}, [outer, inner, len](Node& self) {
    if (!wants_grad(self, 0)) return;
    auto& g = input_grad(self, 0);
    const auto& y = self.value;
    const auto& dy = self.grad;
    for (Index o = 0; o < outer; ++o) {
      for (Index in = 0; in < inner; ++in) {
        const Index base = o * len * inner + in;
        double dot = 0.0;
        for (Index j = 0; j < len; ++j) dot += dy[base + j * inner] * y[base + j * inner];
        for (Index j = 0; j < len; ++j) {
          g[base + j * inner] += y[base + j * inner] * (dy[base + j * inner] - dot);
        }
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear weight");
  const Index in = weight.dim(1), outf = weight.dim(0);
  if (x.rank() < 1 || x.dim(-1) != in) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not end in " + std::to_string(in));
  }
  if (bias.defined() && bias.size() != outf) throw ShapeError("linear: bias length mismatch");
  const Index rows = x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outf;
  std::vector<double> out(static_cast<std::size_t>(rows * outf));
  {
    ConstMap X(x.data().data(), rows, in);
    ConstMap W(weight.data().data(), outf, in);
    MutMap Y(out.data(), rows, outf);
    Y.noalias() = X * W.transpose();
    if (bias.defined()) {
      Eigen::Map<const Eigen::RowVectorXd> b(bias.data().data(), outf);
      Y.rowwise() += b;
    }
  }
  const double flops = 2.0 * static_cast<double>(rows * in * outf);
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op_result(
      "linear", std::move(out_shape), std::move(out), inputs,
      [rows, in, outf](Node& self) {
        ConstMap dY(self.grad.data(), rows, outf);
        if (wants_grad(self, 0)) {
          ConstMap W(self.inputs[1]->value.data(), outf, in);
          MutMap dX(input_grad(self, 0).data(), rows, in);
          dX.noalias() += dY * W;
        }
        if (wants_grad(self, 1)) {
          ConstMap X(self.inputs[0]->value.data(), rows, in);
          MutMap dW(input_grad(self, 1).data(), outf, in);
          dW.noalias() += dY.transpose() * X;
        }
        if (wants_grad(self, 2)) {
          Eigen::Map<Eigen::RowVectorXd> db(input_grad(self, 2).data(), outf);
          db += dY.colwise().sum();
        }
      },
      flops);
}

}  // namespace woundformer
