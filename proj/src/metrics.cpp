#include "woundformer/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "woundformer/errors.hpp"

namespace woundformer {

std::optional<double> dice_per_class(const IntMask& pred, const IntMask& gt, int k) {
  if (pred.shape != gt.shape) {
    throw ShapeError("dice: prediction " + to_string(pred.shape) + " vs ground truth " + to_string(gt.shape));
  }
  Index p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const bool in_p = pred.values[i] == k;
    const bool in_g = gt.values[i] == k;
    p += in_p;
    g += in_g;
    both += in_p && in_g;
  }
  if (p + g == 0) return std::nullopt;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

EvalReport aggregate_dsc(std::span<const MaskPair> samples, std::span<const int> classes) {
  if (samples.empty()) throw ArgumentError("aggregate_dsc: no samples");
  if (classes.empty()) throw ArgumentError("aggregate_dsc: no classes to score");
  EvalReport report;
  report.classes.assign(classes.begin(), classes.end());
  report.n_images = static_cast<Index>(samples.size());
  std::vector<double> sums(classes.size(), 0.0);
  std::vector<Index> counts(classes.size(), 0);
  for (const MaskPair& s : samples) {
    double image_sum = 0.0;
    Index image_count = 0;
    for (std::size_t c = 0; c < classes.size(); ++c) {
      if (const auto d = dice_per_class(s.prediction, s.ground_truth, classes[c])) {
        sums[c] += *d;
        ++counts[c];
        image_sum += *d;
        ++image_count;
      }
    }
    // Nothing scored in either mask: the prediction agrees with the ground truth.
    report.per_image_mean.push_back(image_count ? image_sum / static_cast<double>(image_count) : 1.0);
  }
  double mean_sum = 0.0;
  Index present = 0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (counts[c] == 0) {
      report.per_class_dsc.emplace_back(std::nullopt);
      continue;
    }
    const double v = sums[c] / static_cast<double>(counts[c]);
    report.per_class_dsc.emplace_back(v);
    mean_sum += v;
    ++present;
  }
  report.mean_dsc = present ? mean_sum / static_cast<double>(present) : 0.0;
  return report;
}

namespace {

std::string class_label(const EvalReport& r, std::span<const std::string> names, std::size_t i) {
  const int c = r.classes[i];
  if (c >= 0 && static_cast<std::size_t>(c) < names.size()) return names[static_cast<std::size_t>(c)];
  return "class" + std::to_string(c);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string format_report_tsv(const EvalReport& report, std::span<const std::string> class_names) {
  std::ostringstream os;
  for (std::size_t i = 0; i < report.classes.size(); ++i) os << class_label(report, class_names, i) << '\t';
  os << "Avg.\tImages\n";
  for (const auto& v : report.per_class_dsc) os << (v ? fmt(*v) : "NA") << '\t';
  os << fmt(report.mean_dsc) << '\t' << report.n_images << '\n';
  return os.str();
}

std::string format_report_text(const EvalReport& report, std::span<const std::string> class_names) {
  std::ostringstream os;
  os << "images: " << report.n_images << '\n';
  os << "mean_dsc: " << fmt(report.mean_dsc) << '\n';
  for (std::size_t i = 0; i < report.classes.size(); ++i) {
    const auto& v = report.per_class_dsc[i];
    os << "dsc." << class_label(report, class_names, i) << ": " << (v ? fmt(*v) : "absent") << '\n';
  }
  return os.str();
}

}  // namespace woundformer
