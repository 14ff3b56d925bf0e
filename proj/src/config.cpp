#include "woundformer/config.hpp"

#include <cstdlib>
#include <fstream>

#include "json.hpp"
#include "woundformer/errors.hpp"

namespace woundformer {

using nlohmann::json;

namespace {

json encoder_json(const EncoderConfig& e) {
  return {{"in_channels", e.in_channels},     {"channels", e.channels},
          {"depths", e.depths},               {"heads", e.heads},
          {"sr_ratios", e.sr_ratios},         {"patch_kernels", e.patch_kernels},
          {"patch_strides", e.patch_strides}, {"ffn_expansion", e.ffn_expansion}};
}

void read_encoder(const json& j, EncoderConfig& e) {
  j.at("in_channels").get_to(e.in_channels);
  j.at("channels").get_to(e.channels);
  j.at("depths").get_to(e.depths);
  j.at("heads").get_to(e.heads);
  j.at("sr_ratios").get_to(e.sr_ratios);
  j.at("patch_kernels").get_to(e.patch_kernels);
  j.at("patch_strides").get_to(e.patch_strides);
  j.at("ffn_expansion").get_to(e.ffn_expansion);
}

json decoder_json(const ModelConfig& m) {
  return {{"kind", std::string(to_string(m.decoder_kind))},
          {"unified_channels", m.decoder.unified_channels},
          {"norm", std::string(to_string(m.decoder.align_norm))},
          {"activation", std::string(to_string(m.decoder.align_activation))},
          {"align_kernel", m.decoder.align_kernel},
          {"extra_convs", m.decoder.extra_convs},
          {"mlp_embed_dim", m.mlp_embed_dim}};
}

void read_decoder(const json& j, ModelConfig& m) {
  m.decoder_kind = parse_decoder_kind(j.at("kind").get<std::string>());
  j.at("unified_channels").get_to(m.decoder.unified_channels);
  m.decoder.align_norm = parse_norm(j.at("norm").get<std::string>());
  m.decoder.align_activation = parse_activation(j.at("activation").get<std::string>());
  j.at("align_kernel").get_to(m.decoder.align_kernel);
  j.at("extra_convs").get_to(m.decoder.extra_convs);
  j.at("mlp_embed_dim").get_to(m.mlp_embed_dim);
}

json to_json(const RunConfig& c) {
  json enc = encoder_json(c.model.encoder);
  enc["preset"] = c.encoder_preset;
  const AugmentConfig& a = c.augment;
  const TrainConfig& t = c.train;
  const DataConfig& d = c.data;
  return {
      {"encoder", enc},
      {"decoder", decoder_json(c.model)},
      {"loss",
       {{"kind", std::string(to_string(c.loss.kind))},
        {"focal_gamma", c.loss.focal_gamma},
        {"dice_smooth", c.loss.dice_smooth},
        {"class_weights", c.loss.class_weights}}},
      {"augment",
       {{"p_hflip", a.p_hflip},
        {"p_vflip", a.p_vflip},
        {"p_rotate", a.p_rotate},
        {"max_rotation_deg", a.max_rotation_deg},
        {"p_scale", a.p_scale},
        {"min_scale", a.min_scale},
        {"max_scale", a.max_scale},
        {"p_brightness", a.p_brightness},
        {"brightness", a.brightness},
        {"p_contrast", a.p_contrast},
        {"contrast", a.contrast},
        {"p_noise", a.p_noise},
        {"max_noise_sigma", a.max_noise_sigma}}},
      {"train",
       {{"learning_rate", t.learning_rate},
        {"batch_size", t.batch_size},
        {"max_epochs", t.max_epochs},
        {"plateau_factor", t.plateau_factor},
        {"plateau_patience", t.plateau_patience},
        {"early_stop_patience", t.early_stop_patience},
        {"improvement_threshold", t.improvement_threshold},
        {"seed", t.seed},
        {"input_size", t.input_size},
        {"augment", t.augment},
        {"restore_best", t.restore_best}}},
      {"data",
       {{"palette", d.palette},
        {"train_manifest", d.train_manifest},
        {"val_manifest", d.val_manifest},
        {"test_manifest", d.test_manifest},
        {"synthetic_samples", d.synthetic_samples},
        {"synthetic_size", d.synthetic_size},
        {"synthetic_seed", d.synthetic_seed},
        {"boundary_heavy", d.boundary_heavy},
        {"split", d.split}}},
      {"output", {{"dir", c.output.dir}, {"checkpoint", c.output.checkpoint}, {"results_tsv", c.output.results_tsv}}},
  };
}

RunConfig from_json(const json& j, const json& explicit_encoder) {
  RunConfig c;
  const json& enc = j.at("encoder");
  c.encoder_preset = enc.at("preset").get<std::string>();
  read_encoder(enc, c.model.encoder);
  read_decoder(j.at("decoder"), c.model);

  const json& l = j.at("loss");
  c.loss.kind = parse_loss(l.at("kind").get<std::string>());
  l.at("focal_gamma").get_to(c.loss.focal_gamma);
  l.at("dice_smooth").get_to(c.loss.dice_smooth);
  l.at("class_weights").get_to(c.loss.class_weights);

  const json& a = j.at("augment");
  AugmentConfig& ac = c.augment;
  a.at("p_hflip").get_to(ac.p_hflip);
  a.at("p_vflip").get_to(ac.p_vflip);
  a.at("p_rotate").get_to(ac.p_rotate);
  a.at("max_rotation_deg").get_to(ac.max_rotation_deg);
  a.at("p_scale").get_to(ac.p_scale);
  a.at("min_scale").get_to(ac.min_scale);
  a.at("max_scale").get_to(ac.max_scale);
  a.at("p_brightness").get_to(ac.p_brightness);
  a.at("brightness").get_to(ac.brightness);
  a.at("p_contrast").get_to(ac.p_contrast);
  a.at("contrast").get_to(ac.contrast);
  a.at("p_noise").get_to(ac.p_noise);
  a.at("max_noise_sigma").get_to(ac.max_noise_sigma);

  const json& t = j.at("train");
  TrainConfig& tc = c.train;
  t.at("learning_rate").get_to(tc.learning_rate);
  t.at("batch_size").get_to(tc.batch_size);
  t.at("max_epochs").get_to(tc.max_epochs);
  t.at("plateau_factor").get_to(tc.plateau_factor);
  t.at("plateau_patience").get_to(tc.plateau_patience);
  t.at("early_stop_patience").get_to(tc.early_stop_patience);
  t.at("improvement_threshold").get_to(tc.improvement_threshold);
  t.at("seed").get_to(tc.seed);
  t.at("input_size").get_to(tc.input_size);
  t.at("augment").get_to(tc.augment);
  t.at("restore_best").get_to(tc.restore_best);

  const json& d = j.at("data");
  DataConfig& dc = c.data;
  d.at("palette").get_to(dc.palette);
  d.at("train_manifest").get_to(dc.train_manifest);
  d.at("val_manifest").get_to(dc.val_manifest);
  d.at("test_manifest").get_to(dc.test_manifest);
  d.at("synthetic_samples").get_to(dc.synthetic_samples);
  d.at("synthetic_size").get_to(dc.synthetic_size);
  d.at("synthetic_seed").get_to(dc.synthetic_seed);
  d.at("boundary_heavy").get_to(dc.boundary_heavy);
  d.at("split").get_to(dc.split);

  const json& o = j.at("output");
  o.at("dir").get_to(c.output.dir);
  o.at("checkpoint").get_to(c.output.checkpoint);
  o.at("results_tsv").get_to(c.output.results_tsv);

  if (c.encoder_preset == "micro" || c.encoder_preset == "b5_shape") {
    // A preset supplies every encoder array the user did not spell out.
    const EncoderConfig preset = c.encoder_preset == "micro" ? EncoderConfig::micro() : EncoderConfig::b5_shape();
    const json defaults = encoder_json(preset);
    json merged = defaults;
    for (auto it = enc.begin(); it != enc.end(); ++it) {
      if (explicit_encoder.contains(it.key())) {
        merged[it.key()] = it.value();
      }
    }
    read_encoder(merged, c.model.encoder);
  } else if (c.encoder_preset != "custom") {
    throw ConfigError("encoder.preset must be micro, b5_shape or custom");
  }
  c.model.decoder.num_classes = c.palette().size();
  return c;
}

/// Merges `patch` into `base`, rejecting keys `base` does not have. Encoder
/// keys the patch sets are recorded in `explicit_encoder`.
void merge_strict(json& base, const json& patch, const std::string& where, json& explicit_encoder) {
  if (!patch.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), path, explicit_encoder);
    } else {
      slot = it.value();
      if (where == "encoder") explicit_encoder[it.key()] = true;
    }
  }
}

json parse_override_value(const std::string& text, const json& current) {
  if (current.is_string()) return text;
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  augment.validate();
  train.validate();
  palette().validate();
  if (!loss.class_weights.empty() && static_cast<Index>(loss.class_weights.size()) != model.num_classes()) {
    throw ConfigError("loss.class_weights needs one entry per palette class");
  }
  if (data.synthetic_samples < 1) throw ConfigError("data.synthetic_samples must be positive");
  if (data.synthetic_size <= 0 || data.synthetic_size % 32 != 0) {
    throw ConfigError("data.synthetic_size must be a positive multiple of 32");
  }
}

std::optional<std::filesystem::path> default_config_path() {
  const char* env = std::getenv(kConfigEnvVar);
  if (env == nullptr || *env == '\0') return std::nullopt;
  return std::filesystem::path(env);
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides) {
  json j = to_json(RunConfig{});
  json explicit_encoder = json::object();
  try {
    if (path) {
      std::ifstream in(*path);
      if (!in) throw ConfigError("cannot open config file " + path->string());
      json file;
      try {
        file = json::parse(in, nullptr, true, true);
      } catch (const json::parse_error& e) {
        throw ConfigError(path->string() + ": " + e.what());
      }
      merge_strict(j, file, "", explicit_encoder);
    }
    for (const std::string& o : overrides) {
      const auto eq = o.find('=');
      const auto dot = o.find('.');
      if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
        throw ConfigError("override '" + o + "' is not of the form section.key=value");
      }
      const std::string section = o.substr(0, dot), key = o.substr(dot + 1, eq - dot - 1);
      if (!j.contains(section) || !j[section].contains(key)) throw ConfigError("unknown config key '" + o.substr(0, eq) + "'");
      j[section][key] = parse_override_value(o.substr(eq + 1), j[section][key]);
      if (section == "encoder") explicit_encoder[key] = true;
    }
    RunConfig c = from_json(j, explicit_encoder);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

std::string run_config_to_json(const RunConfig& config, int indent) { return to_json(config).dump(indent); }

std::string model_config_to_json(const ModelConfig& config) {
  json j = {{"encoder", encoder_json(config.encoder)},
            {"decoder", decoder_json(config)},
            {"num_classes", config.decoder.num_classes}};
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    ModelConfig m;
    read_encoder(j.at("encoder"), m.encoder);
    read_decoder(j.at("decoder"), m);
    j.at("num_classes").get_to(m.decoder.num_classes);
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

DatasetSplit load_data(const RunConfig& config) {
  const ClassPalette palette = config.palette();
  const DataConfig& d = config.data;
  if (!d.train_manifest.empty()) {
    DatasetSplit split;
    split.train = load_manifest(d.train_manifest, palette);
    if (!d.val_manifest.empty()) split.val = load_manifest(d.val_manifest, palette);
    if (!d.test_manifest.empty()) split.test = load_manifest(d.test_manifest, palette);
    return split;
  }
  SynthOptions opts;
  opts.boundary_heavy = d.boundary_heavy;
  const auto samples = generate_synthetic_dataset(d.synthetic_samples, d.synthetic_size, palette.size(),
                                                  d.synthetic_seed, opts);
  return split_dataset(samples, d.split, d.synthetic_seed);
}

}  // namespace woundformer
