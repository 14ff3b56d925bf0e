// End-to-end acceptance checks. Prints one "[PASS]" or "[FAIL]" line per
// criterion and exits non-zero if any criterion fails. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "woundformer/checkpoint.hpp"
#include "woundformer/data.hpp"
#include "woundformer/decoder.hpp"
#include "woundformer/encoder.hpp"
#include "woundformer/errors.hpp"
#include "woundformer/gradcheck_suite.hpp"
#include "woundformer/metrics.hpp"
#include "woundformer/model.hpp"
#include "woundformer/optim.hpp"
#include "woundformer/stats.hpp"
#include "woundformer/train.hpp"

using namespace woundformer;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

Outcome gradient_suite() {
  const auto results = run_gradchecks(registered_gradchecks());
  const std::vector<std::string> required{"conv2d 1x1", "conv2d 3x3", "conv2d 7x7 stride 4", "batch_norm train",
                                          "relu", "gelu", "bilinear_upsample", "concat_channels", "matmul",
                                          "softmax", "layer_norm", "attention block (sr 2)", "mix-ffn",
                                          "spatial decoder", "cross_entropy", "focal_dice"};
  std::set<std::string> names;
  double worst = 0.0;
  std::string worst_name, failed;
  for (const auto& r : results) {
    names.insert(r.name);
    if (r.report.max_relative_error >= worst) {
      worst = r.report.max_relative_error;
      worst_name = r.name;
    }
    if (!r.report.passed || !(r.report.max_relative_error < 1e-4)) failed += " " + r.name;
  }
  std::string missing;
  for (const auto& n : required)
    if (!names.count(n)) missing += " " + n;
  Outcome o;
  o.pass = failed.empty() && missing.empty();
  o.detail = fmt("%zu cases, max rel err %.2e (%s) < 1e-4", results.size(), worst, worst_name.c_str());
  if (!failed.empty()) o.detail += "; failed:" + failed;
  if (!missing.empty()) o.detail += "; missing:" + missing;
  return o;
}

// ---------------------------------------------------------------------------
// 2. Shape chain

Outcome shape_chain() {
  const EncoderConfig enc_cfg = EncoderConfig::micro();
  const Index ncls = 7;
  Rng rng(2);
  const MixTransformer encoder(enc_cfg, rng);
  SpatialDecoder decoder(DecoderConfig::full(ncls), enc_cfg.channels, rng);
  NoGradGuard guard;
  std::string bad;
  for (Index h : {64, 128, 224}) {
    const FeaturePyramid p = encoder.forward(Tensor::zeros({1, 3, h, h}));
    for (int i = 0; i < 4; ++i) {
      const Index side = h / (Index{4} << i);
      if (p[i].shape() != Shape{1, enc_cfg.channels[static_cast<std::size_t>(i)], side, side}) {
        bad += fmt(" %lld:level%d=%s", static_cast<long long>(h), i, to_string(p[i].shape()).c_str());
      }
    }
    const Tensor logits = decoder.forward(p, Mode::eval);
    if (logits.shape() != Shape{1, ncls, h / 4, h / 4}) {
      bad += fmt(" %lld:logits=%s", static_cast<long long>(h), to_string(logits.shape()).c_str());
    }
  }
  return {bad.empty(), bad.empty() ? "inputs 64/128/224: pyramid H/4..H/32, logits [N, 7, H/4, W/4]" : "mismatch" + bad};
}

// ---------------------------------------------------------------------------
// 3. Parameter counting

// Layer-by-layer arithmetic for the spatial decoder with BN + activation in
// the alignment step, three fusion convs, 1x1 + 3x3 refinement and the head.
Index spatial_decoder_closed_form(const StageArray& ch, Index c, Index ncls) {
  Index total = 0;
  for (Index ci : ch) total += ci * c + c + 2 * c;
  total += 3 * (2 * c * c + c + 2 * c);
  total += (c * c + c) + (9 * c * c + c);
  total += c * ncls + ncls;
  return total;
}

Index allmlp_closed_form(const StageArray& ch, Index e, Index ncls) {
  Index total = 0;
  for (Index ci : ch) total += ci * e + e;
  return total + 4 * e * e + 2 * e + e * ncls + ncls;
}

Outcome parameter_counting() {
  const Index ncls = 7;
  const auto runtime_spatial = [&](const StageArray& ch) {
    Rng rng(3);
    const SpatialDecoder d(DecoderConfig::full(ncls), ch, rng);
    ParameterSet ps;
    d.collect("decoder", ps);
    return ps.parameter_count();
  };
  const StageArray b5 = EncoderConfig::b5_shape().channels, micro = EncoderConfig::micro().channels;
  const Index b5_oracle = spatial_decoder_closed_form(b5, 128, ncls);
  const Index micro_oracle = spatial_decoder_closed_form(micro, 128, ncls);
  const Index mlp_oracle = allmlp_closed_form(micro, 128, ncls);
  const Index b5_rt = runtime_spatial(b5), micro_rt = runtime_spatial(micro);
  Rng rng(4);
  const AllMlpDecoder mlp(128, ncls, micro, rng);
  ParameterSet ps;
  mlp.collect("decoder", ps);
  const Index mlp_rt = ps.parameter_count();
  Outcome o;
  o.pass = b5_rt == b5_oracle && micro_rt == micro_oracle && mlp_rt == mlp_oracle &&
           decoder_parameter_count(DecoderConfig::full(ncls), b5) == b5_oracle &&
           allmlp_parameter_count(128, ncls, micro) == mlp_oracle;
  o.detail = fmt("B5-shape decoder %lld/%lld, micro %lld/%lld, All-MLP %lld/%lld (runtime/closed form)",
                 static_cast<long long>(b5_rt), static_cast<long long>(b5_oracle), static_cast<long long>(micro_rt),
                 static_cast<long long>(micro_oracle), static_cast<long long>(mlp_rt),
                 static_cast<long long>(mlp_oracle));
  return o;
}

// ---------------------------------------------------------------------------
// 4. Metric oracle

Outcome metric_oracle() {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> side(1, 24), classes(2, 8);
  int mismatches = 0;
  std::vector<MaskPair> pairs;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index h = side(rng), w = side(rng);
    const int k = classes(rng);
    std::uniform_int_distribution<int> cls(0, k - 1);
    IntMask a = IntMask::zeros({h, w}), b = IntMask::zeros({h, w});
    for (int& v : a.values) v = cls(rng);
    for (int& v : b.values) v = cls(rng);
    for (int c = 0; c < k + 1; ++c) {
      long inter = 0, na = 0, nb = 0;
      for (std::size_t i = 0; i < a.values.size(); ++i) {
        inter += a.values[i] == c && b.values[i] == c;
        na += a.values[i] == c;
        nb += b.values[i] == c;
      }
      const auto got = dice_per_class(a, b, c);
      const bool ok = na + nb == 0 ? !got.has_value()
                                   : got.has_value() && *got == 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
      mismatches += !ok;
    }
  }
  // Fixed-size pairs for the aggregation check.
  std::uniform_int_distribution<int> c5(0, 4);
  for (int i = 0; i < 64; ++i) {
    IntMask pa = IntMask::zeros({8, 8}), pb = IntMask::zeros({8, 8});
    for (int& v : pa.values) v = c5(rng);
    for (int& v : pb.values) v = c5(rng);
    pairs.push_back({pa, pb});
  }
  const std::vector<int> cls{0, 1, 2, 3, 4};
  const EvalReport base = aggregate_dsc(pairs, cls);
  double max_perm_diff = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<MaskPair> shuffled = pairs;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const EvalReport r = aggregate_dsc(shuffled, cls);
    max_perm_diff = std::max(max_perm_diff, std::abs(r.mean_dsc - base.mean_dsc));
    for (std::size_t c = 0; c < cls.size(); ++c)
      max_perm_diff = std::max(max_perm_diff, std::abs(*r.per_class_dsc[c] - *base.per_class_dsc[c]));
  }
  Outcome o;
  o.pass = mismatches == 0 && max_perm_diff <= 1e-12;
  o.detail = fmt("1000 random mask pairs, %d mismatches vs pixel counting; 20 image permutations, max |diff| %.1e",
                 mismatches, max_perm_diff);
  return o;
}

// ---------------------------------------------------------------------------
// 5. Statistics oracle

double enumeration_p(const std::vector<double>& d_all) {
  std::vector<double> d;
  for (double x : d_all)
    if (x != 0.0) d.push_back(x);
  std::vector<double> rank(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    double below = 0, equal = 0;
    for (double y : d) {
      below += std::abs(y) < std::abs(d[i]);
      equal += std::abs(y) == std::abs(d[i]);
    }
    rank[i] = below + (equal + 1.0) / 2.0;
  }
  double total = 0, plus = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    total += rank[i];
    if (d[i] > 0) plus += rank[i];
  }
  const double w = std::min(plus, total - plus);
  const std::uint64_t n = std::uint64_t{1} << d.size();
  std::uint64_t hits = 0;
  for (std::uint64_t s = 0; s < n; ++s) {
    double wp = 0;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (s >> i & 1) wp += rank[i];
    hits += std::min(wp, total - wp) <= w;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

Outcome statistics_oracle() {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> level(0, 20);
  int compared = 0, mismatches = 0;
  for (Index n = 5; n <= 12; ++n) {
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n)), d(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        // DSC-like values on a coarse grid so ties and zero differences occur.
        a[i] = level(rng) / 20.0;
        b[i] = level(rng) / 20.0;
        d[i] = a[i] - b[i];
      }
      const auto nonzero = std::count_if(d.begin(), d.end(), [](double x) { return x != 0.0; });
      if (nonzero < 5) continue;
      const PairedTestResult r = wilcoxon_signed_rank(a, b);
      ++compared;
      mismatches += !(r.exact && r.p_value == enumeration_p(d));
    }
  }
  const std::vector<double> base{0.61, 0.72, 0.55, 0.80, 0.67, 0.74};
  std::vector<double> shifted = base;
  for (double& v : shifted) v += 0.03;
  const double p6 = wilcoxon_signed_rank(shifted, base).p_value;
  Outcome o;
  o.pass = mismatches == 0 && compared >= 1500 && p6 == 0.03125;
  o.detail = fmt("%d samples with n = 5..12, %d differ from 2^n enumeration; constant shift n=6 p = %.5f", compared,
                 mismatches, p6);
  return o;
}

// ---------------------------------------------------------------------------
// 6. Overfit convergence

Outcome overfit() {
  const auto samples = generate_synthetic_dataset(8, 64, 7, 1);
  ModelConfig model;
  model.decoder = DecoderConfig::full(7);
  TrainConfig train;
  train.input_size = 64;
  train.max_epochs = 200;
  train.seed = 0;
  // Monitoring the training set itself: the question is whether it can be fit.
  Trainer trainer(model, train, LossConfig{}, AugmentConfig::disabled(), samples, {});
  const TrainResult r = trainer.run();
  const double final_dsc = evaluate(trainer.model(), samples).report.mean_dsc;
  Outcome o;
  o.pass = final_dsc >= 0.90;
  o.detail = fmt("train mean DSC %.4f >= 0.90 (best epoch %d of %zu, %s)", final_dsc, r.best_epoch, r.history.size(),
                 r.stopped_early ? "early stop" : "epoch cap");
  return o;
}

// ---------------------------------------------------------------------------
// 7. Decoder comparison

Outcome decoder_comparison() {
  constexpr int kSeeds = 5;
  constexpr int kEpochs = 30;
  const auto samples = generate_synthetic_dataset(64, 64, 7, 1, SynthOptions{true});
  const DatasetSplit split = split_dataset(samples, {0.625, 0.125, 0.25}, 1);

  const auto run = [&](DecoderKind kind, int seed) {
    ModelConfig model;
    model.decoder = DecoderConfig::full(7);
    model.decoder_kind = kind;
    TrainConfig train;
    train.input_size = 64;
    train.max_epochs = kEpochs;
    // Every run gets exactly kEpochs epochs; best-validation weights are scored.
    train.early_stop_patience = kEpochs + 1;
    train.seed = static_cast<std::uint64_t>(seed);
    Trainer trainer(model, train, LossConfig{}, AugmentConfig::disabled(), split.train, split.val);
    trainer.run();
    return evaluate(trainer.model(), split.test).report;
  };

  std::vector<double> spatial_img(split.test.size(), 0.0), mlp_img(split.test.size(), 0.0);
  double spatial_mean = 0.0, mlp_mean = 0.0;
  std::string per_seed;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const EvalReport s = run(DecoderKind::spatial, seed);
    const EvalReport m = run(DecoderKind::all_mlp, seed);
    spatial_mean += s.mean_dsc / kSeeds;
    mlp_mean += m.mean_dsc / kSeeds;
    for (std::size_t i = 0; i < spatial_img.size(); ++i) {
      spatial_img[i] += s.per_image_mean[i] / kSeeds;
      mlp_img[i] += m.per_image_mean[i] / kSeeds;
    }
    per_seed += fmt(" %.3f/%.3f", s.mean_dsc, m.mean_dsc);
  }
  bool valid = false;
  std::string test;
  try {
    const Comparison c = compare_models(spatial_img, mlp_img);
    valid = c.test.has_value() && c.test->p_value >= 0.0 && c.test->p_value <= 1.0 &&
            c.test->n_pairs >= 5;
    if (c.test) test = fmt("Wilcoxon n=%lld p=%.4g r=%.3f", static_cast<long long>(c.test->n_pairs), c.test->p_value,
                           c.test->effect_size_r);
    else test = c.verdict;
  } catch (const Error& e) {
    test = std::string("comparison failed: ") + e.what();
  }
  Outcome o;
  o.pass = valid && spatial_mean >= mlp_mean - 0.02;
  o.detail = fmt("spatial %.4f vs All-MLP %.4f (need >= %.4f); ", spatial_mean, mlp_mean, mlp_mean - 0.02) + test +
             "; per seed spatial/mlp" + per_seed;
  return o;
}

// ---------------------------------------------------------------------------
// 8. Scheduler and early stopping

Outcome scheduler_trace() {
  // flat 6, improve, flat 6, flat 15
  std::vector<double> trace(6, 0.50);
  trace.push_back(0.60);
  trace.insert(trace.end(), 6, 0.60);
  trace.insert(trace.end(), 15, 0.60);

  PlateauScheduler sched;
  sched.lr = 1e-4;
  EarlyStopping stop;
  std::vector<int> reductions;
  int stopped_at = 0;
  double lr = sched.lr;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const int epoch = static_cast<int>(i) + 1;
    const double next = sched.step(trace[i]);
    if (next < lr) reductions.push_back(epoch);
    lr = next;
    if (stop.step(trace[i])) {
      stopped_at = epoch;
      break;
    }
  }
  // Expected: the first plateau holds five stalls (epochs 2-6) and never
  // exceeds patience; after the epoch-7 improvement the sixth stall (epoch 13)
  // cuts the rate, the counter restarts and epoch 19 cuts it again; the
  // fifteenth stall after epoch 7 stops training at epoch 22.
  const std::vector<int> expect_red{13, 19};
  Outcome o;
  o.pass = reductions == expect_red && stopped_at == 22 && std::abs(lr - 1e-6) < 1e-18;
  std::string red;
  for (int e : reductions) red += " " + std::to_string(e);
  o.detail = fmt("%zu reductions at epochs%s (expected 13 19), lr %.0e, stop at epoch %d (expected 22)",
                 reductions.size(), red.c_str(), lr, stopped_at);
  return o;
}

// ---------------------------------------------------------------------------
// 9. Determinism and checkpoint round trip

bool same_history(const std::vector<EpochRecord>& a, const std::vector<EpochRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].epoch != b[i].epoch || a[i].train_loss != b[i].train_loss || a[i].val_mean_dsc != b[i].val_mean_dsc ||
        a[i].lr != b[i].lr)
      return false;
  }
  return true;
}

Outcome determinism() {
  const auto samples = generate_synthetic_dataset(8, 64, 7, 3);
  const std::vector<SegSample> train(samples.begin(), samples.begin() + 6), val(samples.begin() + 6, samples.end());
  ModelConfig model;
  model.decoder = DecoderConfig::full(7);
  TrainConfig cfg;
  cfg.input_size = 64;
  cfg.max_epochs = 5;
  cfg.seed = 11;
  cfg.learning_rate = 1e-3;
  cfg.augment = true;  // exercises the trainer's random stream
  cfg.restore_best = false;
  const AugmentConfig aug;

  Trainer a(model, cfg, LossConfig{}, aug, train, val), b(model, cfg, LossConfig{}, aug, train, val);
  a.run();
  b.run();
  const bool runs_equal = same_history(a.history(), b.history()) &&
                          encode_checkpoint(a.checkpoint()) == encode_checkpoint(b.checkpoint());

  const fs::path path = fs::temp_directory_path() / "woundformer_acceptance.wfck";
  {
    Trainer first(model, cfg, LossConfig{}, aug, train, val);
    first.run_epoch();
    first.run_epoch();
    save_checkpoint(path, first.checkpoint());
  }
  Trainer resumed(model, cfg, LossConfig{}, aug, train, val);
  resumed.resume(load_checkpoint(path));
  for (int i = 0; i < 3; ++i) resumed.run_epoch();
  fs::remove(path);
  const bool resume_equal = same_history(resumed.history(), a.history()) &&
                            encode_checkpoint(resumed.checkpoint()) == encode_checkpoint(a.checkpoint());
  Outcome o;
  o.pass = runs_equal && resume_equal;
  o.detail = fmt("two seeded 5-epoch runs %s; resume after epoch 2 + 3 epochs %s (history and full checkpoint bytes)",
                 runs_equal ? "bit-identical" : "DIFFER", resume_equal ? "bit-identical" : "DIFFERS");
  return o;
}

// ---------------------------------------------------------------------------
// 10. Ablation harness

std::size_t count_fields(const std::string& line) { return static_cast<std::size_t>(std::count(line.begin(), line.end(), '\t')) + 1; }

Outcome ablation_harness(const fs::path& tsv_path) {
  const auto samples = generate_synthetic_dataset(16, 64, 7, 2);
  const DatasetSplit split = split_dataset(samples, {0.5, 0.25, 0.25}, 2);
  ModelConfig base;
  base.decoder = DecoderConfig::full(7);
  TrainConfig train;
  train.input_size = 64;
  train.max_epochs = 10;
  train.early_stop_patience = 11;

  std::string table = ablation_tsv_header();
  std::string errors;
  int trained = 0;
  for (int row = 1; row <= 11; ++row) {
    try {
      const AblationResult r = run_ablation(row, base, train, LossConfig{}, AugmentConfig{}, split);
      if (r.training.history.size() == 10) ++trained;
      table += ablation_tsv_row(r);
    } catch (const Error& e) {
      errors += fmt(" row %d: %s", row, e.what());
    }
  }
  {
    std::ofstream out(tsv_path);
    out << table;
  }
  std::istringstream lines(table);
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(lines, line)) rows.push_back(line);
  const std::size_t columns = count_fields(rows.front());
  bool layout = rows.size() == 12 && columns == 8;
  for (const auto& r : rows) layout = layout && count_fields(r) == columns;
  const bool row9 = rows.size() > 9 && rows[9].find("1x1, 3x3") != std::string::npos;
  Outcome o;
  o.pass = errors.empty() && trained == 11 && layout && row9;
  o.detail = fmt("%d/11 rows trained 10 epochs, %zu TSV lines x %zu columns, row 9 = [1x1, 3x3]: %s; written to %s",
                 trained, rows.size(), columns, row9 ? "yes" : "no", tsv_path.string().c_str()) +
             errors;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  const fs::path tsv = fs::current_path() / "acceptance_ablation.tsv";
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient suite", 120, gradient_suite},
      {2, "shape chain", 60, shape_chain},
      {3, "parameter counting", 60, parameter_counting},
      {4, "metric oracle", 30, metric_oracle},
      {5, "statistics oracle", 60, statistics_oracle},
      {6, "overfit convergence", 600, overfit},
      {7, "decoder comparison", 3600, decoder_comparison},
      {8, "scheduler/early-stop traces", 60, scheduler_trace},
      {9, "determinism and checkpoint round trip", 300, determinism},
      {10, "ablation harness", 1800, [&] { return ablation_harness(tsv); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s budget", c.budget_s);
    }
    failures += !o.pass;
    std::printf("[%s] %d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
