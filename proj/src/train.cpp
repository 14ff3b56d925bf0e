#include "woundformer/train.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "woundformer/config.hpp"
#include "woundformer/errors.hpp"

namespace woundformer {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (max_epochs < 1) throw ConfigError("train.max_epochs must be at least 1");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ConfigError("train.plateau_factor must lie in (0, 1)");
  if (plateau_patience < 1 || early_stop_patience < 1) throw ConfigError("train patiences must be positive");
  if (improvement_threshold < 0.0) throw ConfigError("train.improvement_threshold must be non-negative");
  if (input_size <= 0 || input_size % 32 != 0) throw ConfigError("train.input_size must be a positive multiple of 32");
}

std::pair<Tensor, IntMask> make_batch(const std::vector<SegSample>& samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ArgumentError("make_batch: empty batch");
  const SegSample& first = samples.at(indices[0]);
  const Index h = first.height(), w = first.width();
  std::vector<double> pixels;
  pixels.reserve(static_cast<std::size_t>(indices.size() * 3 * h * w));
  std::vector<IntMask> masks;
  for (std::size_t i : indices) {
    const SegSample& s = samples.at(i);
    if (s.height() != h || s.width() != w) throw ShapeError("make_batch: samples differ in size");
    const auto d = s.image.data();
    pixels.insert(pixels.end(), d.begin(), d.end());
    masks.push_back(s.mask);
  }
  return {Tensor::from_data({static_cast<Index>(indices.size()), 3, h, w}, std::move(pixels)), stack_masks(masks)};
}

namespace {

std::vector<SegSample> prepare(std::vector<SegSample> samples, Index size) {
  for (auto& s : samples) {
    if (s.height() != size || s.width() != size) s = resize_sample(s, size);
  }
  return samples;
}

std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

}  // namespace

Trainer::Trainer(const ModelConfig& model, const TrainConfig& train, const LossConfig& loss,
                 const AugmentConfig& augment, std::vector<SegSample> train_set, std::vector<SegSample> val_set)
    : model_config_(model),
      config_((train.validate(), train)),
      loss_((loss.validate(), loss)),
      augment_((augment.validate(), augment)),
      train_(prepare(std::move(train_set), train.input_size)),
      val_(prepare(std::move(val_set), train.input_size)),
      model_(model, train.seed),
      adam_(AdamState::for_parameters(model_.parameters().parameters)),
      rng_(derive_rng(train.seed, 4, 0)) {
  if (train_.empty()) throw ArgumentError("training set is empty");
  scheduler_.lr = config_.learning_rate;
  scheduler_.factor = config_.plateau_factor;
  scheduler_.patience = config_.plateau_patience;
  scheduler_.threshold = config_.improvement_threshold;
  stopper_.patience = config_.early_stop_patience;
  stopper_.threshold = config_.improvement_threshold;
}

bool Trainer::finished() const { return stopped_ || epoch_ >= config_.max_epochs; }

double Trainer::train_one_epoch() {
  std::vector<std::size_t> order(train_.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng_);

  auto& params = model_.parameters();
  double loss_sum = 0.0;
  Index pixels = 0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config_.batch_size)) {
    const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config_.batch_size));
    std::vector<SegSample> batch;
    for (std::size_t i = start; i < stop; ++i) {
      const SegSample& s = train_[order[i]];
      batch.push_back(config_.augment ? augment(s, augment_, rng_) : s);
    }
    std::vector<std::size_t> idx(batch.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto [images, labels] = make_batch(batch, idx);

    params.zero_grad();
    const Tensor logits = model_.forward_full(images, Mode::train);
    const Tensor loss = compute_loss(logits, labels, loss_);
    loss.backward();
    adam_step(params.parameters, adam_, scheduler_.lr);

    loss_sum += loss.item() * static_cast<double>(labels.size());
    pixels += labels.size();
  }
  return loss_sum / static_cast<double>(pixels);
}

EpochRecord Trainer::run_epoch() {
  if (finished()) throw ArgumentError("run_epoch: training already finished");
  EpochRecord rec;
  rec.epoch = epoch_ + 1;
  rec.lr = scheduler_.lr;
  rec.train_loss = train_one_epoch();
  rec.val_mean_dsc = evaluate(model_, val_.empty() ? train_ : val_, config_.batch_size).report.mean_dsc;
  ++epoch_;

  if (rec.val_mean_dsc > best_metric_ + config_.improvement_threshold || best_epoch_ == 0) {
    best_metric_ = rec.val_mean_dsc;
    best_epoch_ = rec.epoch;
    best_params_ = snapshot(model_.parameters().parameters);
    best_buffers_ = snapshot(model_.parameters().buffers);
  }
  scheduler_.step(rec.val_mean_dsc);
  stopped_ = stopper_.step(rec.val_mean_dsc);
  history_.push_back(rec);
  return rec;
}

TrainResult Trainer::run(const std::function<void(const EpochRecord&)>& on_epoch) {
  while (!finished()) {
    const EpochRecord rec = run_epoch();
    if (on_epoch) on_epoch(rec);
  }
  if (config_.restore_best) restore_best();
  return {history_, best_epoch_, best_metric_, stopped_};
}

void Trainer::restore_best() {
  if (best_epoch_ == 0) return;
  restore(model_.parameters().parameters, best_params_);
  restore(model_.parameters().buffers, best_buffers_);
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.model_config = model_config_to_json(model_config_);
  c.parameters = snapshot(model_.parameters().parameters);
  c.buffers = snapshot(model_.parameters().buffers);
  c.best_parameters = best_params_;
  c.best_buffers = best_buffers_;
  c.adam = adam_;
  c.epoch = epoch_;
  c.best_metric = best_metric_;
  c.best_epoch = best_epoch_;
  c.scheduler = scheduler_;
  c.stopper = stopper_;
  c.stopped = stopped_;
  c.rng_state = rng_to_string(rng_);
  c.history = history_;
  return c;
}

void Trainer::resume(const Checkpoint& c) {
  if (c.model_config != model_config_to_json(model_config_)) {
    throw ConfigError("checkpoint was written for a different model configuration");
  }
  restore(model_.parameters().parameters, c.parameters);
  restore(model_.parameters().buffers, c.buffers);
  if (c.adam.m.size() != adam_.m.size()) throw ShapeError("checkpoint optimiser state does not match the model");
  adam_ = c.adam;
  epoch_ = c.epoch;
  best_metric_ = c.best_metric;
  best_epoch_ = c.best_epoch;
  best_params_ = c.best_parameters;
  best_buffers_ = c.best_buffers;
  scheduler_ = c.scheduler;
  stopper_ = c.stopper;
  stopped_ = c.stopped;
  std::istringstream is(c.rng_state);
  is >> rng_;
  if (!is) throw FormatError("checkpoint: unreadable rng state");
  history_ = c.history;
}

// ---------------------------------------------------------------------------

Evaluation evaluate(SegmentationModel& model, const std::vector<SegSample>& samples, Index batch_size) {
  if (samples.empty()) throw ArgumentError("evaluate: no samples");
  const Index k = model.config().num_classes();
  for (const auto& s : samples) {
    for (int v : s.mask.values) {
      if (v < 0 || v >= k) {
        throw LabelRangeError("evaluate: " + s.source_id + " holds class " + std::to_string(v) + " but the model has " +
                              std::to_string(k) + " classes");
      }
    }
  }
  NoGradGuard no_grad;
  Evaluation out;
  std::vector<MaskPair> pairs;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    auto [images, labels] = make_batch(samples, idx);
    const IntMask pred = argmax_channels(model.forward_full(images, Mode::eval));
    for (Index i = 0; i < static_cast<Index>(idx.size()); ++i) {
      out.predictions.push_back(batch_item(pred, i));
      pairs.push_back({out.predictions.back(), samples[idx[static_cast<std::size_t>(i)]].mask});
    }
  }
  std::vector<int> classes(static_cast<std::size_t>(k));
  std::iota(classes.begin(), classes.end(), 0);
  out.report = aggregate_dsc(pairs, classes);
  return out;
}

Comparison compare_models(std::span<const double> a, std::span<const double> b, double alpha) {
  if (a.size() != b.size()) {
    throw ArgumentError("compare: per-image score lists differ in length (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
  }
  if (a.empty()) throw ArgumentError("compare: no paired scores");
  Comparison c;
  c.mean_a = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
  c.mean_b = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
  try {
    c.test = wilcoxon_signed_rank(a, b);
  } catch (const UndefinedTestError&) {
    c.verdict = "no difference: every paired score is identical";
    return c;
  }
  char buf[256];
  const char* direction = c.mean_a > c.mean_b ? "A > B" : (c.mean_a < c.mean_b ? "A < B" : "A = B");
  std::snprintf(buf, sizeof buf, "%s (mean %.4f vs %.4f), W = %.1f, p = %.4g%s, r = %.3f, n = %lld: %s", direction,
                c.mean_a, c.mean_b, c.test->statistic, c.test->p_value, c.test->exact ? " exact" : " approx",
                c.test->effect_size_r, static_cast<long long>(c.test->n_pairs),
                c.test->p_value < alpha ? "significant" : "not significant");
  c.verdict = buf;
  return c;
}

// ---------------------------------------------------------------------------

AblationResult run_ablation(int row, const ModelConfig& base, const TrainConfig& train, const LossConfig& loss,
                            const AugmentConfig& augment, const DatasetSplit& data) {
  AblationResult result;
  result.row = row;
  result.row_config = ablation_row(row);
  const AblationSetup setup =
      build_ablation_decoder(result.row_config, base.decoder.num_classes, base.decoder.unified_channels);

  ModelConfig model = base;
  model.decoder_kind = DecoderKind::spatial;
  model.decoder = setup.decoder;
  TrainConfig tc = train;
  tc.augment = setup.augmentation;
  LossConfig lc = loss;
  lc.kind = setup.loss;

  Trainer trainer(model, tc, lc, augment, data.train, data.val);
  result.training = trainer.run();
  const auto& scored = data.test.empty() ? (data.val.empty() ? data.train : data.val) : data.test;
  result.report = evaluate(trainer.model(), scored, tc.batch_size).report;
  return result;
}

std::string ablation_tsv_header() {
  return "Row\tConv.\tBatch Norm\tActivation\tA. Conv.\tLoss Function\tAugmentation\tDSC\n";
}

std::string ablation_tsv_row(const AblationResult& r) {
  const auto yes_no = [](bool b) { return b ? "yes" : "no"; };
  const auto activation = [](Activation a) -> std::string {
    switch (a) {
      case Activation::relu: return "ReLU";
      case Activation::gelu: return "GeLU";
      default: return "no";
    }
  };
  char dsc[32];
  std::snprintf(dsc, sizeof dsc, "%.2f", 100.0 * r.report.mean_dsc);
  std::ostringstream os;
  os << r.row << '\t' << r.row_config.align_kernel << 'x' << r.row_config.align_kernel << '\t' << yes_no(r.row_config.batch_norm)
     << '\t' << activation(r.row_config.activation) << '\t' << describe_kernels(r.row_config.extra_convs) << '\t'
     << (r.row_config.loss == LossKind::cross_entropy ? "Cross Entropy" : "Focal+Dice") << '\t'
     << yes_no(r.row_config.augmentation) << '\t' << dsc << '\n';
  return os.str();
}

}  // namespace woundformer
