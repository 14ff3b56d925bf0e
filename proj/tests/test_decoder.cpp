#include <numeric>

#include "doctest.h"
#include "woundformer/decoder.hpp"
#include "woundformer/errors.hpp"

using namespace woundformer;

namespace {

FeaturePyramid random_pyramid(const StageArray& channels, Index size, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> dist;
  FeaturePyramid p;
  for (int i = 0; i < 4; ++i) {
    const Index side = size / (Index{4} << i);
    std::vector<double> v(static_cast<std::size_t>(2 * channels[i] * side * side));
    for (double& x : v) x = dist(rng);
    p.levels[i] = Tensor::from_data({2, channels[i], side, side}, std::move(v));
  }
  return p;
}

Index runtime_count(const SpatialDecoder& d) {
  ParameterSet ps;
  d.collect("decoder", ps);
  return ps.parameter_count();
}

}  // namespace

TEST_SUITE("decoder") {
  TEST_CASE("B5-shape decoder parameter count, layer by layer") {
    const StageArray b5{64, 128, 320, 512};
    const Index c = 128, ncls = 7;
    Index align = 0;
    for (Index ci : b5) align += ci * c + c + 2 * c;  // conv weight, conv bias, BN affine
    const Index fusion = 3 * (2 * c * c + c + 2 * c);
    const Index refine = (c * c + c) + (9 * c * c + c);
    const Index head = c * ncls + ncls;
    CHECK(align == 132608);
    CHECK(fusion == 99456);
    CHECK(refine == 16512 + 147584);
    CHECK(head == 903);
    const Index oracle = align + fusion + refine + head;
    CHECK(oracle == 397063);

    Rng rng(1);
    const SpatialDecoder dec(DecoderConfig::full(ncls), b5, rng);
    CHECK(runtime_count(dec) == oracle);
    CHECK(decoder_parameter_count(DecoderConfig::full(ncls), b5) == oracle);
  }

  TEST_CASE("micro decoder and All-MLP head parameter counts") {
    const StageArray micro{16, 32, 64, 128};
    Rng rng(2);
    const SpatialDecoder dec(DecoderConfig::full(7), micro, rng);
    CHECK(runtime_count(dec) == 296711);
    CHECK(decoder_parameter_count(DecoderConfig::full(7), micro) == 296711);

    const Index e = 128, ncls = 7;
    Index oracle = 0;
    for (Index ci : micro) oracle += ci * e + e;  // token-wise linear layers
    oracle += 4 * e * e;                          // fuse conv, no bias
    oracle += 2 * e;                              // fuse BN
    oracle += e * ncls + ncls;                    // classifier
    const AllMlpDecoder mlp(e, ncls, micro, rng);
    ParameterSet ps;
    mlp.collect("mlp", ps);
    CHECK(ps.parameter_count() == oracle);
    CHECK(allmlp_parameter_count(e, ncls, micro) == oracle);
    CHECK(oracle == 97927);
  }

  TEST_CASE("every ablation row's analytic count matches its built decoder") {
    const StageArray micro{16, 32, 64, 128};
    for (int row = 1; row <= 11; ++row) {
      const AblationSetup s = build_ablation_decoder(ablation_row(row), 7, 32);
      Rng rng(static_cast<std::uint64_t>(row));
      const SpatialDecoder dec(s.decoder, micro, rng);
      CHECK(runtime_count(dec) == decoder_parameter_count(s.decoder, micro));
    }
  }

  TEST_CASE("feature maps stay four-dimensional throughout the spatial head") {
    const StageArray ch{4, 8, 16, 32};
    Rng rng(3);
    SpatialDecoder dec(DecoderConfig::full(5, 8), ch, rng);
    const FeaturePyramid p = random_pyramid(ch, 64, 4);
    OpTrace trace;
    const Tensor logits = dec.forward(p, Mode::train);
    CHECK(logits.shape() == Shape{2, 5, 16, 16});
    REQUIRE_FALSE(trace.entries().empty());
    for (const auto& e : trace.entries()) {
      INFO(e.op);
      CHECK(e.output_shape.size() == 4);
    }

    // The All-MLP baseline flattens to tokens along the way.
    AllMlpDecoder mlp(8, 5, ch, rng);
    OpTrace mlp_trace;
    CHECK(mlp.forward(p, Mode::train).shape() == Shape{2, 5, 16, 16});
    bool saw_tokens = false;
    for (const auto& e : mlp_trace.entries()) saw_tokens = saw_tokens || e.output_shape.size() == 3;
    CHECK(saw_tokens);
  }

  TEST_CASE("intermediate state resolutions") {
    const StageArray ch{4, 8, 16, 32};
    Rng rng(5);
    DecoderConfig cfg = DecoderConfig::full(3, 8);
    cfg.align_kernel = 3;
    SpatialDecoder dec(cfg, ch, rng);
    const DecoderState s = dec.forward_with_state(random_pyramid(ch, 128, 6), Mode::train);
    for (int i = 0; i < 4; ++i) {
      const Index side = 128 / (Index{4} << i);
      CHECK(s.aligned[i].shape() == Shape{2, 8, side, side});
    }
    CHECK(s.fused.shape() == Shape{2, 8, 32, 32});
    CHECK(s.refined.shape() == Shape{2, 8, 32, 32});
    CHECK(s.logits.shape() == Shape{2, 3, 32, 32});
  }

  TEST_CASE("swapping the concat order equals swapping the fusion weight halves") {
    const StageArray ch{4, 8, 16, 32};
    const Index c = 6;
    Rng rng(7);
    SpatialDecoder dec(DecoderConfig::full(3, c), ch, rng);
    const FeaturePyramid p = random_pyramid(ch, 64, 8);
    const auto aligned = dec.align_channels(p, Mode::eval);
    const Tensor reference = dec.fuse_coarse_to_fine(aligned, Mode::eval, ConcatOrder::fine_first);

    for (auto& f : dec.fuse) {
      auto w = f.conv.weight.mutable_data();
      const std::vector<double> old(w.begin(), w.end());
      for (Index o = 0; o < c; ++o)
        for (Index i = 0; i < 2 * c; ++i) w[static_cast<std::size_t>(o * 2 * c + i)] = old[static_cast<std::size_t>(o * 2 * c + (i + c) % (2 * c))];
    }
    const Tensor swapped = dec.fuse_coarse_to_fine(aligned, Mode::eval, ConcatOrder::coarse_first);
    for (Index i = 0; i < reference.size(); ++i) CHECK(swapped.data()[i] == doctest::Approx(reference.data()[i]).epsilon(1e-12));
  }

  TEST_CASE("ablation grid rows") {
    CHECK(ablation_rows().size() == 11);
    const AblationRow& r1 = ablation_row(1);
    CHECK_FALSE(r1.batch_norm);
    CHECK(r1.activation == Activation::none);
    CHECK(r1.extra_convs.empty());
    CHECK(ablation_row(3).activation == Activation::gelu);
    CHECK(ablation_row(5).align_kernel == 3);
    CHECK(ablation_row(7).extra_convs == std::vector<int>{1, 1});
    const AblationRow& r9 = ablation_row(9);
    CHECK(r9.align_kernel == 1);
    CHECK(r9.batch_norm);
    CHECK(r9.activation == Activation::relu);
    CHECK(r9.extra_convs == std::vector<int>{1, 3});
    CHECK(r9.loss == LossKind::cross_entropy);
    CHECK_FALSE(r9.augmentation);
    CHECK(ablation_row(10).loss == LossKind::focal_dice);
    CHECK(ablation_row(10).augmentation);
    CHECK(ablation_row(11).loss == LossKind::cross_entropy);
    CHECK(ablation_row(11).augmentation);
    CHECK_THROWS_AS(ablation_row(0), ArgumentError);
    CHECK_THROWS_AS(ablation_row(12), ArgumentError);
    CHECK(describe_kernels({}) == "--");
    CHECK(describe_kernels({1, 3}) == "1x1, 3x3");
  }

  TEST_CASE("decoder config validation") {
    DecoderConfig cfg = DecoderConfig::full(7);
    cfg.extra_convs = {5};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = DecoderConfig::full(1);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK(parse_norm("none") == NormKind::none);
    CHECK_THROWS_AS(parse_norm("group_norm"), ConfigError);
  }

  TEST_CASE("runtime FLOPs equal the closed form for both heads") {
    const StageArray ch{16, 32, 64, 128};
    Rng rng(9);
    SpatialDecoder dec(DecoderConfig::full(7), ch, rng);
    AllMlpDecoder mlp(32, 7, ch, rng);
    FeaturePyramid p = random_pyramid(ch, 64, 10);
    NoGradGuard guard;
    {
      OpTrace t;
      (void)dec.forward(p, Mode::eval);
      CHECK(t.total_flops() == 2 * decoder_flops(DecoderConfig::full(7), ch, 64, 64));
    }
    {
      OpTrace t;
      (void)mlp.forward(p, Mode::eval);
      CHECK(t.total_flops() == 2 * allmlp_flops(32, 7, ch, 64, 64));
    }
  }
}
