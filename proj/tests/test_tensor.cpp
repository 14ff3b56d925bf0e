#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "woundformer/errors.hpp"
#include "woundformer/gradcheck.hpp"
#include "woundformer/ops.hpp"

using namespace woundformer;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (double& x : v) x = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(v), grad);
}

// Straight six-deep loop, accumulating bias first, then input channel, kernel row, kernel column.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad, int groups) {
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index cout = w.dim(0), kh = w.dim(2), kw = w.dim(3), cpg = cin / groups, opg = cout / groups;
  const Index ho = (h + 2 * pad - kh) / stride + 1, wo = (wd + 2 * pad - kw) / stride + 1;
  std::vector<double> out;
  for (Index in = 0; in < n; ++in)
    for (Index o = 0; o < cout; ++o)
      for (Index oy = 0; oy < ho; ++oy)
        for (Index ox = 0; ox < wo; ++ox) {
          double acc = b.defined() ? b.at({o}) : 0.0;
          for (Index c = 0; c < cpg; ++c)
            for (Index ky = 0; ky < kh; ++ky)
              for (Index kx = 0; kx < kw; ++kx) {
                const Index iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += w.at({o, c, ky, kx}) * x.at({in, (o / opg) * cpg + c, iy, ix});
              }
          out.push_back(acc);
        }
  return out;
}

double normal_cdf_by_simpson(double x) {
  const double lo = -12.0;
  const int steps = 200000;
  const double h = (x - lo) / steps;
  const auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi); };
  double s = pdf(lo) + pdf(x);
  for (int i = 1; i < steps; ++i) s += (i % 2 ? 4.0 : 2.0) * pdf(lo + i * h);
  return s * h / 3.0;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("tensor construction checks size and finiteness") {
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor::from_data({1}, {std::nan("")}), NumericError);
    const Tensor t = Tensor::full({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.dim(-1) == 3);
    CHECK(t.at({1, 2}) == 1.5);
  }

  TEST_CASE("conv2d matches the direct-loop oracle bit for bit") {
    struct Case {
      Shape x, w;
      int stride, pad, groups;
      bool bias;
    };
    const Case cases[] = {
        {{2, 3, 6, 5}, {4, 3, 1, 1}, 1, 0, 1, true},  {{1, 2, 7, 7}, {3, 2, 3, 3}, 1, 1, 1, true},
        {{1, 3, 16, 16}, {2, 3, 7, 7}, 4, 3, 1, true}, {{2, 4, 5, 6}, {4, 1, 3, 3}, 1, 1, 4, false},
        {{1, 2, 9, 9}, {2, 2, 3, 3}, 2, 1, 1, true},  {{1, 4, 8, 8}, {6, 2, 2, 2}, 2, 0, 2, true},
    };
    std::uint64_t seed = 1;
    for (const auto& c : cases) {
      const Tensor x = random_tensor(c.x, seed++);
      const Tensor w = random_tensor(c.w, seed++);
      const Tensor b = c.bias ? random_tensor({c.w[0]}, seed++) : Tensor();
      const Tensor y = conv2d(x, w, b, c.stride, c.pad, c.groups);
      const auto expected = conv_oracle(x, w, b, c.stride, c.pad, c.groups);
      REQUIRE(static_cast<std::size_t>(y.size()) == expected.size());
      for (std::size_t i = 0; i < expected.size(); ++i) CHECK(y.data()[i] == expected[i]);
    }
  }

  TEST_CASE("conv2d all-ones 3x3 kernel sums the valid neighbourhood") {
    const Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
    const Tensor y = conv2d(x, w, Tensor::zeros({1}), 1, 1);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (double v : y.data()) CHECK(v == 10.0);
  }

  TEST_CASE("conv2d identity 1x1 kernel and shape errors") {
    const Tensor x = random_tensor({2, 3, 4, 4}, 3);
    Tensor w = Tensor::zeros({3, 3, 1, 1});
    for (Index i = 0; i < 3; ++i) w.mutable_data()[static_cast<std::size_t>(i * 3 + i)] = 1.0;
    const Tensor y = conv2d(x, w, Tensor::zeros({3}), 1, 0);
    for (Index i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({2, 4, 3, 3}), Tensor(), 1, 1), ShapeError);
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 7, 7}), Tensor(), 1, 0), ShapeError);
  }

  TEST_CASE("conv2d with padding (k-1)/2 and stride 1 keeps the extent") {
    for (int k : {1, 3, 7}) {
      const Tensor y = conv2d(random_tensor({1, 2, 9, 11}, 4), random_tensor({3, 2, k, k}, 5), Tensor(), 1, (k - 1) / 2);
      CHECK(y.dim(2) == 9);
      CHECK(y.dim(3) == 11);
    }
  }

  TEST_CASE("batch_norm closed forms") {
    auto stats = BatchNormStats::identity(1);
    const Tensor gamma = Tensor::full({1}, 1.0), beta = Tensor::zeros({1});
    const Tensor flat = batch_norm(Tensor::full({2, 1, 2, 2}, 3.0), gamma, beta, stats, Mode::train);
    for (double v : flat.data()) CHECK(v == doctest::Approx(0.0));

    auto stats2 = BatchNormStats::identity(1);
    const Tensor pm = Tensor::from_data({1, 1, 2, 2}, {-1, 1, -1, 1});
    const Tensor y = batch_norm(pm, gamma, beta, stats2, Mode::train);
    const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(y.data()[0] == doctest::Approx(-expected).epsilon(1e-14));
    CHECK(y.data()[1] == doctest::Approx(expected).epsilon(1e-14));
    // Running stats: momentum 0.1 towards mean 0 and unbiased variance 4/3.
    CHECK(stats2.running_mean.data()[0] == doctest::Approx(0.0));
    CHECK(stats2.running_var.data()[0] == doctest::Approx(0.9 + 0.1 * 4.0 / 3.0).epsilon(1e-14));

    auto id = BatchNormStats::identity(2);
    const Tensor x = random_tensor({2, 2, 3, 3}, 6);
    const Tensor g2 = Tensor::from_data({2}, {2.0, -0.5}), b2 = Tensor::from_data({2}, {0.25, 1.0});
    const Tensor e = batch_norm(x, g2, b2, id, Mode::eval);
    for (Index n = 0; n < 2; ++n)
      for (Index c = 0; c < 2; ++c)
        for (Index i = 0; i < 9; ++i) {
          const std::size_t at = static_cast<std::size_t>((n * 2 + c) * 9 + i);
          CHECK(e.data()[at] == doctest::Approx(g2.data()[c] * x.data()[at] / std::sqrt(1.0 + 1e-5) + b2.data()[c]));
        }
    CHECK_THROWS_AS(batch_norm(x, Tensor::zeros({3}), b2, id, Mode::eval), ShapeError);
  }

  TEST_CASE("activations") {
    const Tensor x = Tensor::from_data({3}, {-2.0, 0.0, 3.0});
    const Tensor r = relu(x);
    CHECK(r.data()[0] == 0.0);
    CHECK(r.data()[2] == 3.0);
    const Tensor g = gelu(Tensor::from_data({2}, {0.0, 1.0}));
    CHECK(g.data()[0] == 0.0);
    CHECK(g.data()[1] == doctest::Approx(normal_cdf_by_simpson(1.0)).epsilon(1e-10));
    CHECK(g.data()[1] == doctest::Approx(0.8413).epsilon(1e-4));
    CHECK(parse_activation("gelu") == Activation::gelu);
    CHECK_THROWS_AS(parse_activation("tanh"), ConfigError);
  }

  TEST_CASE("bilinear upsample uses half-pixel centres") {
    const Tensor y = bilinear_upsample(Tensor::from_data({1, 1, 1, 2}, {0.0, 1.0}), 1, 4);
    const double expected[] = {0.0, 0.25, 0.75, 1.0};
    for (int i = 0; i < 4; ++i) CHECK(y.data()[static_cast<std::size_t>(i)] == doctest::Approx(expected[i]).epsilon(1e-15));

    // Hand formula: src = (dst + 0.5) * in / out - 0.5, clamped at the edges.
    const Tensor x = random_tensor({1, 1, 3, 4}, 8);
    const Tensor up = bilinear_upsample(x, 7, 9);
    const auto coord = [](Index dst, Index in, Index out) {
      double s = (dst + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in - 1));
      const Index lo = static_cast<Index>(std::floor(s));
      return std::tuple{lo, std::min(lo + 1, in - 1), s - static_cast<double>(lo)};
    };
    for (Index oy = 0; oy < 7; ++oy)
      for (Index ox = 0; ox < 9; ++ox) {
        const auto [y0, y1, fy] = coord(oy, 3, 7);
        const auto [x0, x1, fx] = coord(ox, 4, 9);
        const double v = (1 - fy) * ((1 - fx) * x.at({0, 0, y0, x0}) + fx * x.at({0, 0, y0, x1})) +
                         fy * ((1 - fx) * x.at({0, 0, y1, x0}) + fx * x.at({0, 0, y1, x1}));
        CHECK(up.at({0, 0, oy, ox}) == doctest::Approx(v).epsilon(1e-14));
      }

    const Tensor same = bilinear_upsample(x, 3, 4);
    for (Index i = 0; i < x.size(); ++i) CHECK(same.data()[i] == x.data()[i]);
    const Tensor c = bilinear_upsample(Tensor::full({1, 2, 2, 3}, 0.7), 5, 8);
    for (double v : c.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
    CHECK_THROWS_AS(bilinear_upsample(x, 2, 4), ArgumentError);
  }

  TEST_CASE("concat_channels shape, order and gradient split") {
    const Tensor a = random_tensor({1, 2, 4, 4}, 9, true), b = random_tensor({1, 3, 4, 4}, 10, true);
    const Tensor c = concat_channels(a, b);
    CHECK(c.shape() == Shape{1, 5, 4, 4});
    CHECK(c.at({0, 1, 2, 3}) == a.at({0, 1, 2, 3}));
    CHECK(c.at({0, 2, 0, 0}) == b.at({0, 0, 0, 0}));
    std::vector<double> seed(static_cast<std::size_t>(c.size()));
    for (std::size_t i = 0; i < seed.size(); ++i) seed[i] = static_cast<double>(i);
    c.backward(seed);
    CHECK(a.grad()[5] == 5.0);
    CHECK(b.grad()[0] == 32.0);
    CHECK_THROWS_AS(concat_channels(a, Tensor::zeros({1, 3, 8, 4})), ShapeError);
  }

  TEST_CASE("matmul, softmax and layer_norm") {
    const Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    const Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    const Tensor p = matmul(m, eye);
    for (int i = 0; i < 4; ++i) CHECK(p.data()[static_cast<std::size_t>(i)] == m.data()[static_cast<std::size_t>(i)]);
    CHECK_THROWS_AS(matmul(m, Tensor::zeros({3, 2})), ShapeError);

    const Tensor s = softmax(Tensor::zeros({1, 3}));
    for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0));
    const Tensor x = random_tensor({2, 5}, 11);
    const Tensor shifted = softmax(add(x, Tensor::full({2, 5}, 7.5)));
    const Tensor plain = softmax(x);
    for (Index i = 0; i < x.size(); ++i) CHECK(shifted.data()[i] == doctest::Approx(plain.data()[i]).epsilon(1e-13));

    const Tensor ln = layer_norm(random_tensor({3, 8}, 12), Tensor::full({8}, 1.0), Tensor::zeros({8}));
    for (Index r = 0; r < 3; ++r) {
      double mean = 0, sq = 0;
      for (Index c = 0; c < 8; ++c) mean += ln.at({r, c}) / 8.0;
      for (Index c = 0; c < 8; ++c) sq += (ln.at({r, c}) - mean) * (ln.at({r, c}) - mean) / 8.0;
      CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
      CHECK(sq == doctest::Approx(1.0).epsilon(1e-4));
    }
  }

  TEST_CASE("backward twice doubles leaf gradients") {
    const Tensor x = random_tensor({3, 4}, 13, true);
    const Tensor loss = sum(gelu(scale(x, 2.0)));
    loss.backward();
    const std::vector<double> first(x.grad().begin(), x.grad().end());
    loss.backward();
    for (std::size_t i = 0; i < first.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * first[i]).epsilon(1e-15));
  }

  TEST_CASE("non-finite results name the producing op") {
    const Tensor big = Tensor::full({2}, 1e200);
    try {
      (void)mul(big, big);
      FAIL("expected a NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("mul") != std::string::npos);
    }
  }

  TEST_CASE("grad mode and op tracing") {
    const Tensor x = random_tensor({2, 2}, 14, true);
    {
      NoGradGuard guard;
      CHECK_FALSE(relu(x).requires_grad());
    }
    CHECK(relu(x).requires_grad());
    OpTrace trace;
    (void)matmul(x, x);
    REQUIRE(trace.entries().size() == 1);
    CHECK(trace.entries()[0].op == "matmul");
    CHECK(trace.total_flops() == 16.0);
  }

  TEST_CASE("identical inputs give bit-identical outputs and gradients") {
    const auto run = [] {
      const Tensor x = random_tensor({1, 2, 6, 6}, 15, true);
      const Tensor w = random_tensor({3, 2, 3, 3}, 16, true);
      const Tensor y = sum(gelu(conv2d(x, w, Tensor(), 1, 1)));
      y.backward();
      std::vector<double> out{y.item()};
      out.insert(out.end(), w.grad().begin(), w.grad().end());
      return out;
    };
    CHECK(run() == run());
  }

  TEST_CASE("gradcheck contract") {
    const Tensor x = random_tensor({5}, 17, true);
    const auto linear_fn = [](const std::vector<Tensor>& in) { return scale(in[0], 3.0); };
    const GradcheckReport ok = gradcheck(linear_fn, {x});
    CHECK(ok.passed);
    CHECK(ok.max_relative_error < 1e-8);

    GradcheckOptions strict;
    strict.tolerance = 0.0;
    const auto nonlinear = [](const std::vector<Tensor>& in) { return gelu(in[0]); };
    CHECK_FALSE(gradcheck(nonlinear, {x}, strict).passed);

    // An input sitting exactly on the ReLU kink is skipped, not failed.
    const Tensor k = Tensor::from_data({3}, {0.0, 0.5, -0.5}, true);
    const GradcheckReport kink = gradcheck([](const auto& in) { return relu(in[0]); }, {k});
    CHECK(kink.passed);
    CHECK(kink.inputs[0].skipped_kinks == 1);
  }
}
