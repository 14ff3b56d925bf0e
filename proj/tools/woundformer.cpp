// Command-line front end: train, eval, gradcheck, ablate, compare, synth-data, count.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "woundformer/config.hpp"
#include "woundformer/errors.hpp"
#include "woundformer/gradcheck_suite.hpp"
#include "woundformer/train.hpp"

namespace fs = std::filesystem;
using namespace woundformer;

namespace {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kIo = 3,
  kFormat = 4,
  kData = 5,
  kShape = 6,
  kNumeric = 7,
  kCheckFailed = 9,
};

int exit_code_for(const Error& e) {
  const std::string_view c = e.category();
  if (c == "config") return kUsage;
  if (c == "io") return kIo;
  if (c == "format") return kFormat;
  if (c == "label-range" || c == "dimension-mismatch") return kData;
  if (c == "shape" || c == "argument" || c == "undefined-test") return kShape;
  if (c == "numeric") return kNumeric;
  return kInternal;
}

const char* const kSections[] = {"encoder", "decoder", "loss", "augment", "train", "data", "output"};

/// Pulls "--section.key=value" arguments out of argv; everything else is left
/// for the regular parser.
std::vector<std::string> extract_overrides(int argc, char** argv, std::vector<std::string>& rest) {
  std::vector<std::string> overrides;
  rest.push_back(argv[0]);
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    bool taken = false;
    if (arg.rfind("--", 0) == 0) {
      const auto eq = arg.find('=');
      const auto dot = arg.find('.');
      if (eq != std::string::npos && dot != std::string::npos && dot < eq) {
        const std::string section = arg.substr(2, dot - 2);
        for (const char* s : kSections) taken = taken || section == s;
        if (taken) overrides.push_back(arg.substr(2));
      }
    }
    if (!taken) rest.push_back(arg);
  }
  return overrides;
}

fs::path output_path(const RunConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.output.dir);
  return fs::path(cfg.output.dir) / name;
}

void print_epoch(const EpochRecord& r) {
  std::printf("epoch %3d  loss %.6f  val_mean_dsc %.4f  lr %.3g\n", r.epoch, r.train_loss, r.val_mean_dsc, r.lr);
  std::fflush(stdout);
}

std::vector<double> read_scores(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<double> v;
  std::string tok;
  while (in >> tok) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": not a number: '" + tok + "'");
    }
  }
  return v;
}

void write_scores(const fs::path& path, const std::vector<double>& scores) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  for (double s : scores) out << s << '\n';
}

/// Model rebuilt from a checkpoint, holding its best (or last) weights.
SegmentationModel model_from_checkpoint(const Checkpoint& ckpt, bool last) {
  SegmentationModel model(model_config_from_json(ckpt.model_config), 0);
  const bool use_best = !last && !ckpt.best_parameters.empty();
  restore(model.parameters().parameters, use_best ? ckpt.best_parameters : ckpt.parameters);
  restore(model.parameters().buffers, use_best ? ckpt.best_buffers : ckpt.buffers);
  return model;
}

const std::vector<SegSample>& pick_split(const DatasetSplit& data, const std::string& split) {
  if (split == "train") return data.train;
  if (split == "val") return data.val;
  if (split == "test") return data.test;
  throw ConfigError("unknown split '" + split + "' (train, val or test)");
}

std::vector<SegSample> resized(std::vector<SegSample> samples, Index size) {
  for (auto& s : samples) {
    if (s.height() != size || s.width() != size) s = resize_sample(s, size);
  }
  return samples;
}

// ---------------------------------------------------------------------------

int cmd_train(const RunConfig& cfg, bool resume) {
  const DatasetSplit data = load_data(cfg);
  std::printf("train %zu  val %zu  test %zu samples\n", data.train.size(), data.val.size(), data.test.size());
  Trainer trainer(cfg.model, cfg.train, cfg.loss, cfg.augment, data.train, data.val);
  const fs::path ckpt_path = output_path(cfg, cfg.output.checkpoint);
  if (resume && fs::exists(ckpt_path)) {
    trainer.resume(load_checkpoint(ckpt_path));
    std::printf("resumed from %s at epoch %d\n", ckpt_path.c_str(), trainer.epoch());
  }
  const TrainResult result = trainer.run([&](const EpochRecord& r) {
    print_epoch(r);
    save_checkpoint(ckpt_path, trainer.checkpoint());
  });
  std::printf("best epoch %d  val_mean_dsc %.4f%s\n", result.best_epoch, result.best_metric,
              result.stopped_early ? "  (early stop)" : "");
  if (!data.test.empty()) {
    const Evaluation ev = evaluate(trainer.model(), resized(data.test, cfg.train.input_size), cfg.train.batch_size);
    std::cout << format_report_text(ev.report, cfg.palette().names);
    write_scores(output_path(cfg, "test_per_image.txt"), ev.report.per_image_mean);
  }
  return kOk;
}

int cmd_eval(const RunConfig& cfg, const std::string& ckpt_arg, const std::string& split, bool tsv, bool last,
             const std::string& per_image) {
  const fs::path ckpt_path = ckpt_arg.empty() ? fs::path(cfg.output.dir) / cfg.output.checkpoint : fs::path(ckpt_arg);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  SegmentationModel model = model_from_checkpoint(ckpt, last);
  const ClassPalette palette = cfg.palette();
  if (model.config().num_classes() != palette.size()) {
    throw ConfigError("class-count mismatch: checkpoint predicts " + std::to_string(model.config().num_classes()) +
                      " classes, palette '" + cfg.data.palette + "' has " + std::to_string(palette.size()));
  }
  const DatasetSplit data = load_data(cfg);
  const auto& samples = pick_split(data, split);
  if (samples.empty()) throw ConfigError("split '" + split + "' is empty");
  const Evaluation ev = evaluate(model, resized(samples, cfg.train.input_size), cfg.train.batch_size);
  std::cout << (tsv ? format_report_tsv(ev.report, palette.names) : format_report_text(ev.report, palette.names));
  if (!per_image.empty()) write_scores(per_image, ev.report.per_image_mean);
  return kOk;
}

int cmd_gradcheck(double tolerance) {
  GradcheckOptions opts;
  opts.tolerance = tolerance;
  bool all = true;
  for (const auto& r : run_gradchecks(registered_gradchecks(), opts)) {
    Index skipped = 0;
    for (const auto& in : r.report.inputs) skipped += in.skipped_kinks;
    std::printf("%-26s elements %5lld  max_rel_err %.3e  kinks %lld  %s\n", r.name.c_str(),
                static_cast<long long>(r.elements), r.report.max_relative_error, static_cast<long long>(skipped),
                r.report.passed ? "PASS" : "FAIL");
    all = all && r.report.passed;
  }
  return all ? kOk : kCheckFailed;
}

int cmd_ablate(const RunConfig& cfg, int row) {
  const DatasetSplit data = load_data(cfg);
  const AblationResult r = run_ablation(row, cfg.model, cfg.train, cfg.loss, cfg.augment, data);
  const fs::path tsv = output_path(cfg, cfg.output.results_tsv);
  const bool fresh = !fs::exists(tsv) || fs::file_size(tsv) == 0;
  std::ofstream out(tsv, std::ios::app);
  if (!out) throw IoError("cannot append to " + tsv.string());
  if (fresh) out << ablation_tsv_header();
  out << ablation_tsv_row(r);
  std::cout << ablation_tsv_header() << ablation_tsv_row(r);
  std::printf("appended to %s\n", tsv.c_str());
  return kOk;
}

std::vector<double> scores_for(const RunConfig& cfg, const fs::path& path) {
  if (path.extension() != ".wfck") return read_scores(path);
  SegmentationModel model = model_from_checkpoint(load_checkpoint(path), false);
  const DatasetSplit data = load_data(cfg);
  if (data.test.empty()) throw ConfigError("compare: the configured test split is empty");
  return evaluate(model, resized(data.test, cfg.train.input_size), cfg.train.batch_size).report.per_image_mean;
}

int cmd_compare(const RunConfig& cfg, const std::string& a, const std::string& b) {
  const std::vector<double> sa = scores_for(cfg, a), sb = scores_for(cfg, b);
  const Comparison c = compare_models(sa, sb);
  std::printf("A: %s\nB: %s\n%s\n", a.c_str(), b.c_str(), c.verdict.c_str());
  return kOk;
}

int cmd_synth(const RunConfig& cfg, const std::string& out_dir) {
  const DataConfig& d = cfg.data;
  SynthOptions opts;
  opts.boundary_heavy = d.boundary_heavy;
  const auto samples =
      generate_synthetic_dataset(d.synthetic_samples, d.synthetic_size, cfg.palette().size(), d.synthetic_seed, opts);
  write_dataset(out_dir, samples, "all.tsv");
  const DatasetSplit split = split_dataset(samples, d.split, d.synthetic_seed);
  const auto manifest = [&](const std::string& name, const std::vector<SegSample>& part) {
    std::vector<ManifestEntry> entries;
    for (const auto& s : part) entries.push_back({s.source_id + ".ppm", s.source_id + ".pgm"});
    write_manifest(fs::path(out_dir) / name, entries);
  };
  manifest("train.tsv", split.train);
  manifest("val.tsv", split.val);
  manifest("test.tsv", split.test);
  std::printf("wrote %zu samples to %s (train %zu, val %zu, test %zu)\n", samples.size(), out_dir.c_str(),
              split.train.size(), split.val.size(), split.test.size());
  return kOk;
}

int cmd_count(const RunConfig& cfg, const std::string& what) {
  SegmentationModel model(cfg.model, cfg.train.seed);
  const ModelConfig& mc = cfg.model;
  const bool spatial = mc.decoder_kind == DecoderKind::spatial;
  bool match = true;
  if (what == "params") {
    const Index enc_analytic = encoder_parameter_count(mc.encoder);
    const Index dec_analytic = spatial ? decoder_parameter_count(mc.decoder, mc.encoder.channels)
                                       : allmlp_parameter_count(mc.mlp_embed_dim, mc.num_classes(), mc.encoder.channels);
    const Index total_runtime = model.parameters().parameter_count();
    const Index dec_runtime = model.decoder_parameter_count();
    const Index enc_runtime = total_runtime - dec_runtime;
    std::printf("%-8s %14s %14s\n", "", "analytic", "runtime");
    std::printf("%-8s %14lld %14lld\n", "encoder", static_cast<long long>(enc_analytic),
                static_cast<long long>(enc_runtime));
    std::printf("%-8s %14lld %14lld\n", "decoder", static_cast<long long>(dec_analytic),
                static_cast<long long>(dec_runtime));
    std::printf("%-8s %14lld %14lld\n", "total", static_cast<long long>(enc_analytic + dec_analytic),
                static_cast<long long>(total_runtime));
    match = enc_analytic == enc_runtime && dec_analytic == dec_runtime;
  } else if (what == "flops") {
    const Index s = cfg.train.input_size;
    const double enc_analytic = encoder_flops(mc.encoder, s, s);
    const double dec_analytic = spatial ? decoder_flops(mc.decoder, mc.encoder.channels, s, s)
                                        : allmlp_flops(mc.mlp_embed_dim, mc.num_classes(), mc.encoder.channels, s, s);
    NoGradGuard no_grad;
    OpTrace trace;
    (void)model.forward(Tensor::zeros({1, mc.encoder.in_channels, s, s}), Mode::eval);
    const double runtime = trace.total_flops();
    std::printf("input %lldx%lld\nanalytic %.0f (encoder %.0f, decoder %.0f)\nruntime  %.0f\n",
                static_cast<long long>(s), static_cast<long long>(s), enc_analytic + dec_analytic, enc_analytic,
                dec_analytic, runtime);
    match = enc_analytic + dec_analytic == runtime;
  } else {
    throw ConfigError("count: expected 'params' or 'flops'");
  }
  std::printf("%s\n", match ? "analytic == runtime" : "MISMATCH between analytic and runtime counts");
  return match ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> rest;
  const std::vector<std::string> overrides = extract_overrides(argc, argv, rest);

  CLI::App app{"WoundFormer segmentation: training, evaluation and verification tools"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("-c,--config", config_path, "JSON run-config (default: $WOUNDFORMER_CONFIG)");
  app.footer("Any config key can be overridden with --section.key=value, e.g. --train.max_epochs=10.");

  bool resume = false;
  auto* train = app.add_subcommand("train", "Train a model; writes <output.dir>/<output.checkpoint> every epoch");
  train->add_flag("--resume", resume, "Continue from the existing checkpoint");

  std::string ckpt, split = "test", per_image;
  bool tsv = false, last = false;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a data split");
  eval->add_option("--checkpoint", ckpt, "Checkpoint file (default: the configured one)");
  eval->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_flag("--tsv", tsv, "Tab-separated report");
  eval->add_flag("--last", last, "Use the final weights instead of the best ones");
  eval->add_option("--per-image", per_image, "Write per-image mean DSC to this file");

  double tolerance = 1e-4;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  grad->add_option("--tolerance", tolerance, "Maximum relative error");

  int row = 0;
  auto* ablate = app.add_subcommand("ablate", "Train and score one ablation row, appending to the results TSV");
  ablate->add_option("row", row, "Row 1..11")->required()->check(CLI::Range(1, 11));

  std::string cmp_a, cmp_b;
  auto* compare = app.add_subcommand("compare", "Paired Wilcoxon test of two models' per-image mean DSC");
  compare->add_option("a", cmp_a, "Checkpoint (.wfck) or per-image score file")->required();
  compare->add_option("b", cmp_b, "Checkpoint (.wfck) or per-image score file")->required();

  std::string synth_out;
  auto* synth = app.add_subcommand("synth-data", "Write a synthetic dataset with train/val/test manifests");
  synth->add_option("out", synth_out, "Output directory")->required();

  std::string count_what;
  auto* count = app.add_subcommand("count", "Analytic vs runtime parameter or FLOP counts");
  count->add_option("what", count_what, "params or flops")->required()->check(CLI::IsMember({"params", "flops"}));

  auto* show = app.add_subcommand("show-config", "Print the resolved run-config");

  try {
    std::vector<const char*> args;
    for (const auto& s : rest) args.push_back(s.c_str());
    app.parse(static_cast<int>(args.size()), args.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    std::optional<fs::path> path;
    if (!config_path.empty()) {
      path = config_path;
    } else {
      path = default_config_path();
    }
    const RunConfig cfg = load_run_config(path, overrides);

    if (*train) return cmd_train(cfg, resume);
    if (*eval) return cmd_eval(cfg, ckpt, split, tsv, last, per_image);
    if (*grad) return cmd_gradcheck(tolerance);
    if (*ablate) return cmd_ablate(cfg, row);
    if (*compare) return cmd_compare(cfg, cmp_a, cmp_b);
    if (*synth) return cmd_synth(cfg, synth_out);
    if (*count) return cmd_count(cfg, count_what);
    if (*show) {
      std::cout << run_config_to_json(cfg) << '\n';
      return kOk;
    }
    return kUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", e.category(), e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error [internal]: %s\n", e.what());
    return kInternal;
  }
}
