#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "woundformer/errors.hpp"
#include "woundformer/metrics.hpp"
#include "woundformer/stats.hpp"

using namespace woundformer;

namespace {

IntMask random_mask(Index h, Index w, int k, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> cls(0, k - 1);
  IntMask m = IntMask::zeros({h, w});
  for (int& v : m.values) v = cls(rng);
  return m;
}

IntMask upsample_nearest(const IntMask& m, Index f) {
  IntMask out = IntMask::zeros({m.height() * f, m.width() * f});
  for (Index y = 0; y < out.height(); ++y)
    for (Index x = 0; x < out.width(); ++x) out.at(y, x) = m.at(y / f, x / f);
  return out;
}

// Two-sided p by listing every sign pattern of the non-zero differences.
double enumerated_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  std::vector<double> mag(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) mag[i] = std::abs(d[i]);
  std::vector<double> rank(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    double below = 0, equal = 0;
    for (double m : mag) {
      below += m < mag[i];
      equal += m == mag[i];
    }
    rank[i] = below + (equal + 1.0) / 2.0;
  }
  double total = 0, plus = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    total += rank[i];
    if (d[i] > 0) plus += rank[i];
  }
  const double observed = std::min(plus, total - plus);
  const std::size_t patterns = std::size_t{1} << d.size();
  std::size_t extreme = 0;
  for (std::size_t s = 0; s < patterns; ++s) {
    double wp = 0;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (s >> i & 1) wp += rank[i];
    extreme += std::min(wp, total - wp) <= observed;
  }
  return static_cast<double>(extreme) / static_cast<double>(patterns);
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("dice basics") {
    IntMask gt = IntMask::zeros({2, 4});
    gt.values = {1, 1, 0, 0, 1, 1, 0, 0};
    CHECK(*dice_per_class(gt, gt, 1) == 1.0);
    IntMask half = IntMask::zeros({2, 4});
    half.values = {1, 0, 1, 0, 1, 0, 1, 0};  // 2 hits, 2 false positives
    CHECK(*dice_per_class(half, gt, 1) == 0.5);
    IntMask disjoint = IntMask::zeros({2, 4});
    disjoint.values = {0, 0, 1, 1, 0, 0, 1, 1};
    CHECK(*dice_per_class(disjoint, gt, 1) == 0.0);
    CHECK_FALSE(dice_per_class(gt, gt, 5).has_value());
    CHECK_THROWS_AS(dice_per_class(gt, IntMask::zeros({4, 2}), 1), ShapeError);
  }

  TEST_CASE("dice equals brute-force counting and is symmetric") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      const IntMask a = random_mask(5, 7, 4, rng), b = random_mask(5, 7, 4, rng);
      for (int k = 0; k < 4; ++k) {
        int inter = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < a.values.size(); ++i) {
          inter += a.values[i] == k && b.values[i] == k;
          na += a.values[i] == k;
          nb += b.values[i] == k;
        }
        const auto d = dice_per_class(a, b, k);
        if (na + nb == 0) {
          CHECK_FALSE(d.has_value());
        } else {
          CHECK(*d == 2.0 * inter / (na + nb));
          CHECK(*d == *dice_per_class(b, a, k));
        }
      }
    }
  }

  TEST_CASE("aggregate_dsc conventions") {
    IntMask gt = IntMask::zeros({2, 2});
    gt.values = {0, 1, 1, 0};
    const std::vector<int> classes{0, 1, 2};
    const std::vector<MaskPair> perfect{{gt, gt}};
    const EvalReport r = aggregate_dsc(perfect, classes);
    CHECK(*r.per_class_dsc[0] == 1.0);
    CHECK(*r.per_class_dsc[1] == 1.0);
    CHECK_FALSE(r.per_class_dsc[2].has_value());
    CHECK(r.mean_dsc == 1.0);
    CHECK(r.n_images == 1);

    IntMask pred = gt;
    pred.values = {0, 1, 0, 0};  // class 1: 2*1/(1+2)
    const std::vector<MaskPair> two{{gt, gt}, {pred, gt}};
    const EvalReport r2 = aggregate_dsc(two, std::vector<int>{1});
    CHECK(*r2.per_class_dsc[0] == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
    CHECK(r2.per_image_mean.size() == 2);

    const std::vector<MaskPair> none;
    CHECK_THROWS_AS(aggregate_dsc(none, classes), ArgumentError);
  }

  TEST_CASE("aggregate_dsc ignores image order and integer upsampling") {
    std::mt19937_64 rng(12);
    std::vector<MaskPair> pairs;
    for (int i = 0; i < 6; ++i) pairs.push_back({random_mask(4, 4, 3, rng), random_mask(4, 4, 3, rng)});
    const std::vector<int> classes{0, 1, 2};
    const EvalReport base = aggregate_dsc(pairs, classes);

    std::vector<MaskPair> shuffled = pairs;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const EvalReport perm = aggregate_dsc(shuffled, classes);
    CHECK(perm.mean_dsc == doctest::Approx(base.mean_dsc).epsilon(1e-15));

    std::vector<MaskPair> scaled;
    for (const auto& p : pairs) scaled.push_back({upsample_nearest(p.prediction, 3), upsample_nearest(p.ground_truth, 3)});
    const EvalReport up = aggregate_dsc(scaled, classes);
    for (std::size_t c = 0; c < classes.size(); ++c) CHECK(*up.per_class_dsc[c] == doctest::Approx(*base.per_class_dsc[c]).epsilon(1e-15));
  }

  TEST_CASE("report formats follow the class order") {
    IntMask gt = IntMask::zeros({1, 2});
    gt.values = {0, 1};
    const std::vector<MaskPair> pairs{{gt, gt}};
    const EvalReport r = aggregate_dsc(pairs, std::vector<int>{0, 1, 2});
    const std::vector<std::string> names{"Background", "Granulation", "Slough"};
    const std::string tsv = format_report_tsv(r, names);
    CHECK(tsv.rfind("Background\tGranulation\tSlough\tAvg.\tImages\n", 0) == 0);
    CHECK(tsv.find("NA") != std::string::npos);
  }

  TEST_CASE("wilcoxon exact p matches sign enumeration") {
    std::mt19937_64 rng(13);
    std::uniform_int_distribution<int> size(5, 12);
    std::uniform_int_distribution<int> step(-6, 6);
    int compared = 0;
    for (int trial = 0; trial < 200; ++trial) {
      const int n = size(rng);
      std::vector<double> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        // Coarse values so ties and zero differences occur.
        a[static_cast<std::size_t>(i)] = 0.25 * step(rng);
        b[static_cast<std::size_t>(i)] = 0.25 * step(rng);
      }
      int nonzero = 0;
      for (int i = 0; i < n; ++i) nonzero += a[static_cast<std::size_t>(i)] != b[static_cast<std::size_t>(i)];
      if (nonzero < 5) {
        if (nonzero == 0) {
          CHECK_THROWS_AS(wilcoxon_signed_rank(a, b), UndefinedTestError);
        } else {
          CHECK_THROWS_AS(wilcoxon_signed_rank(a, b), ArgumentError);
        }
        continue;
      }
      const PairedTestResult r = wilcoxon_signed_rank(a, b);
      CHECK(r.exact);
      CHECK(r.p_value == enumerated_p(a, b));
      CHECK(r.p_value >= 0.0);
      CHECK(r.p_value <= 1.0);
      CHECK(r.effect_size_r <= 1.0);
      ++compared;
    }
    CHECK(compared > 150);
  }

  TEST_CASE("wilcoxon constant shift, n = 6") {
    const std::vector<double> b{0.1, 0.4, 0.2, 0.8, 0.5, 0.3};
    std::vector<double> a = b;
    for (double& v : a) v += 0.05;
    const PairedTestResult r = wilcoxon_signed_rank(a, b);
    CHECK(r.statistic == 0.0);
    CHECK(r.p_value == 0.03125);
    CHECK(r.n_pairs == 6);
  }

  TEST_CASE("wilcoxon normal approximation above twenty pairs") {
    // Reference values from an established statistics package (tie and
    // continuity corrected, zero differences dropped).
    const std::vector<double> d{0.5, -1.25, 2.0, 3.5, -0.75, 1.0, 1.0,  2.5,   -2.0, 4.0, 0.25, 1.5, -0.5,
                                3.0, 2.25,  1.75, -1.0, 2.75, 0.0, 3.25, 1.25, -0.25, 2.0, 0.75, 1.5};
    const std::vector<double> zeros(d.size(), 0.0);
    const PairedTestResult r = wilcoxon_signed_rank(d, zeros);
    CHECK_FALSE(r.exact);
    CHECK(r.n_pairs == 24);
    CHECK(r.statistic == 45.0);
    CHECK(r.p_value == doctest::Approx(0.0028108846242595347).epsilon(1e-12));
    CHECK(std::abs(r.z) == doctest::Approx(3.001991777753191).epsilon(1e-12));
    CHECK(r.effect_size_r == doctest::Approx(3.001991777753191 / std::sqrt(24.0)).epsilon(1e-12));
  }

  TEST_CASE("wilcoxon argument errors") {
    const std::vector<double> a{1, 2, 3, 4, 5, 6}, b{1, 2, 3};
    CHECK_THROWS_AS(wilcoxon_signed_rank(a, b), ArgumentError);
    CHECK_THROWS_AS(wilcoxon_signed_rank(a, a), UndefinedTestError);
  }

  TEST_CASE("average ranks") {
    const std::vector<double> m{3.0, 1.0, 3.0, 2.0};
    CHECK(average_ranks(m) == std::vector<double>{3.5, 1.0, 3.5, 2.0});
  }
}
