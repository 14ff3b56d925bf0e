#include "woundformer/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "woundformer/errors.hpp"

namespace woundformer {

std::vector<double> average_ranks(std::span<const double> magnitudes) {
  const std::size_t n = magnitudes.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return magnitudes[i] < magnitudes[j]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && magnitudes[order[j + 1]] == magnitudes[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

PairedTestResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ArgumentError("wilcoxon: paired samples differ in length (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
  }
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diffs.push_back(d);
  }
  if (diffs.empty()) throw UndefinedTestError("wilcoxon: all paired differences are zero");
  const Index m = static_cast<Index>(diffs.size());
  if (m < 5) throw ArgumentError("wilcoxon: need at least 5 non-zero differences, got " + std::to_string(m));

  std::vector<double> magnitudes(diffs.size());
  std::transform(diffs.begin(), diffs.end(), magnitudes.begin(), [](double d) { return std::abs(d); });
  const std::vector<double> ranks = average_ranks(magnitudes);

  double w_plus = 0.0, w_minus = 0.0;
  for (std::size_t i = 0; i < diffs.size(); ++i) (diffs[i] > 0 ? w_plus : w_minus) += ranks[i];

  PairedTestResult r;
  r.n_pairs = m;
  r.statistic = std::min(w_plus, w_minus);

  const double md = static_cast<double>(m);
  const double mean = md * (md + 1.0) / 4.0;
  double tie_term = 0.0;
  {
    std::vector<double> sorted = magnitudes;
    std::sort(sorted.begin(), sorted.end());
    std::size_t i = 0;
    while (i < sorted.size()) {
      std::size_t j = i;
      while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_term += t * t * t - t;
      i = j + 1;
    }
  }
  const double sd = std::sqrt(md * (md + 1.0) * (2.0 * md + 1.0) / 24.0 - tie_term / 48.0);
  r.z = (w_plus - mean) / sd;
  r.effect_size_r = std::min(1.0, std::abs(r.z) / std::sqrt(md));

  if (m <= kExactWilcoxonLimit) {
    // Null distribution of the doubled positive-rank sum; doubled ranks are integers.
    std::vector<long long> doubled(ranks.size());
    long long total = 0;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      doubled[i] = std::llround(2.0 * ranks[i]);
      total += doubled[i];
    }
    std::vector<double> counts(static_cast<std::size_t>(total + 1), 0.0);
    counts[0] = 1.0;
    long long reach = 0;
    for (long long rk : doubled) {
      for (long long s = reach; s >= 0; --s) counts[s + rk] += counts[s];
      reach += rk;
    }
    const long long threshold = std::llround(2.0 * r.statistic);
    double tail = 0.0;
    for (long long s = 0; s <= threshold; ++s) tail += counts[s];
    r.p_value = std::min(1.0, 2.0 * tail / std::ldexp(1.0, static_cast<int>(m)));
    r.exact = true;
  } else {
    const double zc = std::max(0.0, std::abs(w_plus - mean) - 0.5) / sd;
    r.p_value = std::min(1.0, std::erfc(zc / std::sqrt(2.0)));
    r.exact = false;
  }
  return r;
}

}  // namespace woundformer
