#include "woundformer/gradcheck_suite.hpp"

#include <memory>

#include "woundformer/decoder.hpp"
#include "woundformer/encoder.hpp"
#include "woundformer/losses.hpp"

namespace woundformer {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (double& x : v) x = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

IntMask random_labels(Shape shape, int k, Rng& rng) {
  std::uniform_int_distribution<int> dist(0, k - 1);
  IntMask m = IntMask::zeros(std::move(shape));
  for (int& v : m.values) v = dist(rng);
  return m;
}

std::vector<Tensor> with_parameters(Tensor x, const ParameterSet& ps) {
  std::vector<Tensor> out{std::move(x)};
  for (const auto& p : ps.parameters) out.push_back(p.tensor);
  for (auto& t : out) t.set_requires_grad(true);
  return out;
}

/// Random feature pyramid for a 32x32 input.
FeaturePyramid random_pyramid(const StageArray& channels, Rng& rng) {
  FeaturePyramid p;
  for (int i = 0; i < 4; ++i) {
    const Index side = Index{8} >> i;
    p.levels[static_cast<std::size_t>(i)] = random_tensor({1, channels[static_cast<std::size_t>(i)], side, side}, rng);
  }
  return p;
}

}  // namespace

std::vector<GradcheckCase> registered_gradchecks(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradcheckCase> cases;
  const auto add = [&](std::string name, GradcheckFn fn, std::vector<Tensor> inputs) {
    cases.push_back({std::move(name), std::move(fn), std::move(inputs)});
  };

  add("conv2d 1x1", [](const auto& in) { return conv2d(in[0], in[1], in[2], 1, 0); },
      {random_tensor({2, 3, 4, 4}, rng), random_tensor({4, 3, 1, 1}, rng), random_tensor({4}, rng)});
  add("conv2d 3x3", [](const auto& in) { return conv2d(in[0], in[1], in[2], 1, 1); },
      {random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)});
  add("conv2d 7x7 stride 4", [](const auto& in) { return conv2d(in[0], in[1], in[2], 4, 3); },
      {random_tensor({1, 2, 12, 12}, rng), random_tensor({2, 2, 7, 7}, rng), random_tensor({2}, rng)});
  add("conv2d depthwise 3x3", [](const auto& in) { return conv2d(in[0], in[1], in[2], 1, 1, 4); },
      {random_tensor({1, 4, 5, 5}, rng), random_tensor({4, 1, 3, 3}, rng), random_tensor({4}, rng)});

  auto stats = std::make_shared<BatchNormStats>(BatchNormStats::identity(3));
  add("batch_norm train",
      [stats](const auto& in) { return batch_norm(in[0], in[1], in[2], *stats, Mode::train); },
      {random_tensor({2, 3, 3, 3}, rng), random_tensor({3}, rng), random_tensor({3}, rng)});

  add("relu", [](const auto& in) { return relu(in[0]); }, {random_tensor({3, 4, 5}, rng)});
  add("gelu", [](const auto& in) { return gelu(in[0]); }, {random_tensor({3, 4, 5}, rng)});
  add("bilinear_upsample", [](const auto& in) { return bilinear_upsample(in[0], 7, 9); },
      {random_tensor({2, 2, 3, 4}, rng)});
  add("concat_channels", [](const auto& in) { return concat_channels(in[0], in[1]); },
      {random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 3, 3, 3}, rng)});
  add("matmul", [](const auto& in) { return matmul(in[0], in[1]); },
      {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 5}, rng)});
  add("matmul transposed", [](const auto& in) { return matmul(in[0], in[1], true); },
      {random_tensor({2, 3, 4}, rng), random_tensor({2, 5, 4}, rng)});
  add("softmax", [](const auto& in) { return softmax(in[0], -1); }, {random_tensor({3, 4, 6}, rng)});
  add("layer_norm", [](const auto& in) { return layer_norm(in[0], in[1], in[2]); },
      {random_tensor({2, 5, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)});
  add("linear", [](const auto& in) { return linear(in[0], in[1], in[2]); },
      {random_tensor({2, 5, 6}, rng), random_tensor({4, 6}, rng), random_tensor({4}, rng)});

  {
    auto attn = std::make_shared<EfficientSelfAttention>(EfficientSelfAttention::create(8, 2, 2, rng));
    ParameterSet ps;
    attn->collect("", ps);
    add("attention block (sr 2)", [attn](const auto& in) { return (*attn)(in[0], 4, 4); },
        with_parameters(random_tensor({1, 16, 8}, rng), ps));
  }
  {
    auto ffn = std::make_shared<MixFfn>(MixFfn::create(4, 2, rng));
    ParameterSet ps;
    ffn->collect("", ps);
    add("mix-ffn", [ffn](const auto& in) { return (*ffn)(in[0], 3, 3); },
        with_parameters(random_tensor({2, 9, 4}, rng), ps));
  }
  {
    const StageArray channels{4, 8, 16, 32};
    DecoderConfig cfg = DecoderConfig::full(3, 8);
    auto dec = std::make_shared<SpatialDecoder>(cfg, channels, rng);
    const FeaturePyramid pyr = random_pyramid(channels, rng);
    ParameterSet ps;
    dec->collect("", ps);
    std::vector<Tensor> inputs(pyr.levels.begin(), pyr.levels.end());
    for (const auto& p : ps.parameters) inputs.push_back(p.tensor);
    for (auto& t : inputs) t.set_requires_grad(true);
    add("spatial decoder",
        [dec](const auto& in) {
          FeaturePyramid p;
          for (std::size_t i = 0; i < 4; ++i) p.levels[i] = in[i];
          return dec->forward(p, Mode::train);
        },
        inputs);
  }
  {
    const StageArray channels{4, 8, 16, 32};
    auto dec = std::make_shared<AllMlpDecoder>(8, 3, channels, rng);
    const FeaturePyramid pyr = random_pyramid(channels, rng);
    ParameterSet ps;
    dec->collect("", ps);
    std::vector<Tensor> inputs(pyr.levels.begin(), pyr.levels.end());
    for (const auto& p : ps.parameters) inputs.push_back(p.tensor);
    for (auto& t : inputs) t.set_requires_grad(true);
    add("all-mlp decoder",
        [dec](const auto& in) {
          FeaturePyramid p;
          for (std::size_t i = 0; i < 4; ++i) p.levels[i] = in[i];
          return dec->forward(p, Mode::train);
        },
        inputs);
  }

  const IntMask labels = random_labels({2, 3, 4}, 4, rng);
  add("cross_entropy", [labels](const auto& in) { return cross_entropy(in[0], labels); },
      {random_tensor({2, 4, 3, 4}, rng)});
  add("cross_entropy weighted",
      [labels](const auto& in) {
        const std::vector<double> w{0.5, 1.0, 2.0, 1.5};
        return cross_entropy(in[0], labels, w);
      },
      {random_tensor({2, 4, 3, 4}, rng)});
  add("focal_dice", [labels](const auto& in) { return focal_dice(in[0], labels, 2.0, 1.0); },
      {random_tensor({2, 4, 3, 4}, rng)});
  return cases;
}

std::vector<GradcheckCaseResult> run_gradchecks(const std::vector<GradcheckCase>& cases,
                                                const GradcheckOptions& options) {
  std::vector<GradcheckCaseResult> out;
  for (const auto& c : cases) {
    Index elements = 0;
    for (const auto& t : c.inputs) elements += t.size();
    out.push_back({c.name, gradcheck(c.fn, c.inputs, options), elements});
  }
  return out;
}

}  // namespace woundformer
