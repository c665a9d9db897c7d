// SPDX-License-Identifier: Apache-2.0

#include "trex/config.hpp"

#include <fstream>

namespace trex {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError(path + "." + item.key() + ": unknown key");
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback, const std::string& path) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type");
  }
}

ScaleRange get_range(const json& obj, const char* key, ScaleRange fallback,
                     const std::string& path) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw ConfigError(path + "." + key + ": expected [min, max]");
  return {v[0].get<double>(), v[1].get<double>()};
}

std::array<double, 3> get_triple(const json& obj, const char* key, std::array<double, 3> fallback,
                                 const std::string& path) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_array() || v.size() != 3)
    throw ConfigError(path + "." + key + ": expected 3 numbers");
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

void parse_branch_ops(const json& obj, const std::string& path, BranchOps& ops) {
  check_keys(obj, path,
             {"flip_prob", "jitter_prob", "brightness", "contrast", "saturation", "hue",
              "grayscale_prob", "blur_prob", "blur_radius", "solarize_prob",
              "solarize_threshold"});
  ops.flip_prob = get_or(obj, "flip_prob", ops.flip_prob, path);
  ops.jitter.probability = get_or(obj, "jitter_prob", ops.jitter.probability, path);
  ops.jitter.brightness = get_or(obj, "brightness", ops.jitter.brightness, path);
  ops.jitter.contrast = get_or(obj, "contrast", ops.jitter.contrast, path);
  ops.jitter.saturation = get_or(obj, "saturation", ops.jitter.saturation, path);
  ops.jitter.hue = get_or(obj, "hue", ops.jitter.hue, path);
  ops.grayscale_prob = get_or(obj, "grayscale_prob", ops.grayscale_prob, path);
  ops.blur_prob = get_or(obj, "blur_prob", ops.blur_prob, path);
  const ScaleRange blur =
      get_range(obj, "blur_radius", {ops.blur_radius_min, ops.blur_radius_max}, path);
  ops.blur_radius_min = blur.min;
  ops.blur_radius_max = blur.max;
  ops.solarize_prob = get_or(obj, "solarize_prob", ops.solarize_prob, path);
  ops.solarize_threshold = get_or(obj, "solarize_threshold", ops.solarize_threshold, path);
}

json branch_ops_json(const BranchOps& ops) {
  return json{{"flip_prob", ops.flip_prob},
              {"jitter_prob", ops.jitter.probability},
              {"brightness", ops.jitter.brightness},
              {"contrast", ops.jitter.contrast},
              {"saturation", ops.jitter.saturation},
              {"hue", ops.jitter.hue},
              {"grayscale_prob", ops.grayscale_prob},
              {"blur_prob", ops.blur_prob},
              {"blur_radius", {ops.blur_radius_min, ops.blur_radius_max}},
              {"solarize_prob", ops.solarize_prob},
              {"solarize_threshold", ops.solarize_threshold}};
}

void parse_data(const json& obj, DataConfig& data) {
  check_keys(obj, "data",
             {"kind", "path", "name", "seed", "classes", "train_per_class", "val_per_class",
              "test_per_class", "image_size", "family_offset", "background_noise",
              "position_jitter"});
  data.kind = get_or<std::string>(obj, "kind", data.kind, "data");
  if (data.kind == "trxd") {
    if (!obj.contains("path")) throw ConfigError("data.path: required for kind trxd");
    data.path = obj.at("path").get<std::string>();
    return;
  }
  if (data.kind != "synthetic") throw ConfigError("data.kind: must be synthetic or trxd");
  SyntheticSpec& s = data.synthetic;
  s.name = get_or<std::string>(obj, "name", s.name, "data");
  s.seed = get_or<std::uint64_t>(obj, "seed", s.seed, "data");
  s.num_classes = get_or<std::size_t>(obj, "classes", s.num_classes, "data");
  s.train_per_class = get_or<std::size_t>(obj, "train_per_class", s.train_per_class, "data");
  s.val_per_class = get_or<std::size_t>(obj, "val_per_class", s.val_per_class, "data");
  s.test_per_class = get_or<std::size_t>(obj, "test_per_class", s.test_per_class, "data");
  s.image_size = get_or<std::size_t>(obj, "image_size", s.image_size, "data");
  s.family_offset = get_or<std::uint32_t>(obj, "family_offset", s.family_offset, "data");
  s.background_noise = get_or(obj, "background_noise", s.background_noise, "data");
  s.position_jitter = get_or(obj, "position_jitter", s.position_jitter, "data");
}

void parse_augment(const json& obj, AugmentConfig& aug) {
  check_keys(obj, "augment",
             {"preset", "global_scale", "local_scale", "global_resolution", "local_resolution",
              "n_global", "n_local", "norm_mean", "norm_std", "global_ops", "local_ops"});
  aug.preset = preset_from_name(
      get_or<std::string>(obj, "preset", preset_name(aug.preset), "augment"));
  apply_preset(aug);  // explicit keys below override the preset
  aug.global_scale = get_range(obj, "global_scale", aug.global_scale, "augment");
  aug.local_scale = get_range(obj, "local_scale", aug.local_scale, "augment");
  aug.global_resolution = get_or(obj, "global_resolution", aug.global_resolution, "augment");
  aug.local_resolution = get_or(obj, "local_resolution", aug.local_resolution, "augment");
  aug.n_global = get_or(obj, "n_global", aug.n_global, "augment");
  aug.n_local = get_or(obj, "n_local", aug.n_local, "augment");
  aug.norm_mean = get_triple(obj, "norm_mean", aug.norm_mean, "augment");
  aug.norm_std = get_triple(obj, "norm_std", aug.norm_std, "augment");
  if (obj.contains("global_ops")) parse_branch_ops(obj.at("global_ops"), "augment.global_ops", aug.global_ops);
  if (obj.contains("local_ops")) parse_branch_ops(obj.at("local_ops"), "augment.local_ops", aug.local_ops);
  aug.validate();
}

void parse_model(const json& obj, TrainConfig& train) {
  check_keys(obj, "model", {"encoder", "projector", "predictor"});
  if (obj.contains("encoder")) {
    const json& e = obj.at("encoder");
    check_keys(e, "model.encoder", {"pool_grid", "hidden_widths", "output_dim", "use_batchnorm"});
    train.encoder.pool_grid = get_or(e, "pool_grid", train.encoder.pool_grid, "model.encoder");
    train.encoder.hidden_widths = get_or<std::vector<std::size_t>>(
        e, "hidden_widths", train.encoder.hidden_widths, "model.encoder");
    train.encoder.output_dim = get_or(e, "output_dim", train.encoder.output_dim, "model.encoder");
    train.encoder.use_batchnorm =
        get_or(e, "use_batchnorm", train.encoder.use_batchnorm, "model.encoder");
    train.encoder.validate();
  }
  if (obj.contains("projector")) {
    const json& p = obj.at("projector");
    check_keys(p, "model.projector", {"hidden_layers", "hidden_dim", "bottleneck_dim", "input_l2"});
    train.projector.hidden_layers =
        get_or(p, "hidden_layers", train.projector.hidden_layers, "model.projector");
    train.projector.hidden_dim =
        get_or(p, "hidden_dim", train.projector.hidden_dim, "model.projector");
    train.projector.bottleneck_dim =
        get_or(p, "bottleneck_dim", train.projector.bottleneck_dim, "model.projector");
    train.projector.input_l2 = get_or(p, "input_l2", train.projector.input_l2, "model.projector");
  }
  if (train.projector.hidden_layers == 0)
    train.projector.bottleneck_dim = train.encoder.output_dim;  // identity projector
  if (obj.contains("predictor")) {
    const json& p = obj.at("predictor");
    check_keys(p, "model.predictor", {"enabled", "inner_dim"});
    train.predictor.enabled = get_or(p, "enabled", train.predictor.enabled, "model.predictor");
    train.predictor.inner_dim =
        get_or(p, "inner_dim", train.predictor.inner_dim, "model.predictor");
  }
}

void parse_objective(const json& obj, LossConfig& loss) {
  check_keys(obj, "objective",
             {"kind", "temperature", "classifier", "memory_capacity", "ema_momentum",
              "ema_average_bn_stats"});
  loss.kind =
      loss_kind_from_name(get_or<std::string>(obj, "kind", loss_kind_name(loss.kind), "objective"));
  loss.temperature = get_or(obj, "temperature", loss.temperature, "objective");
  loss.classifier = get_or<std::string>(obj, "classifier", loss.classifier, "objective");
  loss.memory_capacity = get_or(obj, "memory_capacity", loss.memory_capacity, "objective");
  loss.ema_momentum = get_or(obj, "ema_momentum", loss.ema_momentum, "objective");
  loss.ema_average_bn_stats =
      get_or(obj, "ema_average_bn_stats", loss.ema_average_bn_stats, "objective");
  if (loss.temperature <= 0.0) throw ConfigError("objective.temperature: must be positive");
  if (loss.ema_momentum < 0.0 || loss.ema_momentum > 1.0)
    throw ConfigError("objective.ema_momentum: must be in [0, 1]");
}

void parse_optimizer(const json& obj, TrainConfig& train) {
  check_keys(obj, "optimizer",
             {"base_lr", "batch_size", "epochs", "warmup_epochs", "momentum", "weight_decay",
              "log_every", "checkpoint_every", "train_acc_every"});
  train.base_lr = get_or(obj, "base_lr", train.base_lr, "optimizer");
  train.batch_size = get_or(obj, "batch_size", train.batch_size, "optimizer");
  train.epochs = get_or(obj, "epochs", train.epochs, "optimizer");
  train.warmup_epochs = get_or(obj, "warmup_epochs", train.warmup_epochs, "optimizer");
  train.momentum = get_or(obj, "momentum", train.momentum, "optimizer");
  train.weight_decay = get_or(obj, "weight_decay", train.weight_decay, "optimizer");
  train.log_every = get_or(obj, "log_every", train.log_every, "optimizer");
  train.checkpoint_every = get_or(obj, "checkpoint_every", train.checkpoint_every, "optimizer");
  train.train_acc_every = get_or(obj, "train_acc_every", train.train_acc_every, "optimizer");
  if (train.batch_size == 0) throw ConfigError("optimizer.batch_size: must be positive");
  if (train.epochs == 0) throw ConfigError("optimizer.epochs: must be positive");
}

void parse_eval(const json& obj, ProbeConfig& probe) {
  check_keys(obj, "eval",
             {"trials", "lr_range", "wd_range", "epochs", "batch_size", "l2_normalize_features",
              "seeds", "val_fraction", "short_side"});
  probe.trials = get_or(obj, "trials", probe.trials, "eval");
  const ScaleRange lr = get_range(obj, "lr_range", {probe.lr_min, probe.lr_max}, "eval");
  probe.lr_min = lr.min;
  probe.lr_max = lr.max;
  const ScaleRange wd = get_range(obj, "wd_range", {probe.wd_min, probe.wd_max}, "eval");
  probe.wd_min = wd.min;
  probe.wd_max = wd.max;
  probe.epochs = get_or(obj, "epochs", probe.epochs, "eval");
  probe.batch_size = get_or(obj, "batch_size", probe.batch_size, "eval");
  probe.l2_normalize_features =
      get_or(obj, "l2_normalize_features", probe.l2_normalize_features, "eval");
  probe.seeds = get_or(obj, "seeds", probe.seeds, "eval");
  probe.val_fraction = get_or(obj, "val_fraction", probe.val_fraction, "eval");
  probe.short_side = get_or(obj, "short_side", probe.short_side, "eval");
  if (probe.trials == 0 || probe.seeds == 0)
    throw ConfigError("eval.trials/seeds: must be positive");
  if (probe.lr_min <= 0.0 || probe.wd_min <= 0.0)
    throw ConfigError("eval: search ranges must be positive");
}

void parse_analysis(const json& obj, AnalysisConfig& a) {
  check_keys(obj, "analysis",
             {"pair_budget", "sparsity_eps", "coding_precision_sq", "hook_every"});
  a.pair_budget = get_or(obj, "pair_budget", a.pair_budget, "analysis");
  a.sparsity_eps = get_or(obj, "sparsity_eps", a.sparsity_eps, "analysis");
  a.coding_precision_sq = get_or(obj, "coding_precision_sq", a.coding_precision_sq, "analysis");
  a.hook_every = get_or(obj, "hook_every", a.hook_every, "analysis");
}

void parse_io(const json& obj, IoConfig& io) {
  check_keys(obj, "io", {"output_dir", "run_name", "seed", "precision"});
  io.output_dir = get_or<std::string>(obj, "output_dir", io.output_dir, "io");
  io.run_name = get_or<std::string>(obj, "run_name", io.run_name, "io");
  io.seed = get_or<std::uint64_t>(obj, "seed", io.seed, "io");
  io.precision = get_or<std::string>(obj, "precision", io.precision, "io");
  if (io.precision != "f32" && io.precision != "f64")
    throw ConfigError("io.precision: must be f32 or f64");
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& doc) {
  check_keys(doc, "config",
             {"data", "augment", "model", "objective", "optimizer", "eval", "analysis", "io"});
  RunConfig cfg;
  apply_preset(cfg.train.augment);
  if (doc.contains("data")) parse_data(doc.at("data"), cfg.data);
  if (doc.contains("augment")) parse_augment(doc.at("augment"), cfg.train.augment);
  if (doc.contains("model")) parse_model(doc.at("model"), cfg.train);
  if (doc.contains("objective")) parse_objective(doc.at("objective"), cfg.train.loss);
  if (doc.contains("optimizer")) parse_optimizer(doc.at("optimizer"), cfg.train);
  if (doc.contains("eval")) parse_eval(doc.at("eval"), cfg.probe);
  if (doc.contains("analysis")) parse_analysis(doc.at("analysis"), cfg.train.analysis);
  if (doc.contains("io")) parse_io(doc.at("io"), cfg.io);

  cfg.train.seed = cfg.io.seed;
  cfg.train.precision = cfg.io.precision == "f64" ? NumericMode::f64 : NumericMode::f32;
  if (cfg.train.predictor.enabled && !cfg.train.loss.uses_memory())
    throw ConfigError("model.predictor.enabled: the predictor requires an ocm/oca objective");
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  nlohmann::json doc;
  try {
    is >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_run_config(doc);
}

nlohmann::json to_json(const RunConfig& cfg) {
  json data;
  data["kind"] = cfg.data.kind;
  if (cfg.data.kind == "trxd") {
    data["path"] = cfg.data.path;
  } else {
    const SyntheticSpec& s = cfg.data.synthetic;
    data["name"] = s.name;
    data["seed"] = s.seed;
    data["classes"] = s.num_classes;
    data["train_per_class"] = s.train_per_class;
    data["val_per_class"] = s.val_per_class;
    data["test_per_class"] = s.test_per_class;
    data["image_size"] = s.image_size;
    data["family_offset"] = s.family_offset;
    data["background_noise"] = s.background_noise;
    data["position_jitter"] = s.position_jitter;
  }

  const AugmentConfig& a = cfg.train.augment;
  json augment{{"preset", preset_name(a.preset)},
               {"global_scale", {a.global_scale.min, a.global_scale.max}},
               {"local_scale", {a.local_scale.min, a.local_scale.max}},
               {"global_resolution", a.global_resolution},
               {"local_resolution", a.local_resolution},
               {"n_global", a.n_global},
               {"n_local", a.n_local},
               {"norm_mean", a.norm_mean},
               {"norm_std", a.norm_std},
               {"global_ops", branch_ops_json(a.global_ops)},
               {"local_ops", branch_ops_json(a.local_ops)}};

  json model{{"encoder",
              {{"pool_grid", cfg.train.encoder.pool_grid},
               {"hidden_widths", cfg.train.encoder.hidden_widths},
               {"output_dim", cfg.train.encoder.output_dim},
               {"use_batchnorm", cfg.train.encoder.use_batchnorm}}},
             {"projector",
              {{"hidden_layers", cfg.train.projector.hidden_layers},
               {"hidden_dim", cfg.train.projector.hidden_dim},
               {"bottleneck_dim", cfg.train.projector.bottleneck_dim},
               {"input_l2", cfg.train.projector.input_l2}}},
             {"predictor",
              {{"enabled", cfg.train.predictor.enabled},
               {"inner_dim", cfg.train.predictor.inner_dim}}}};

  json objective{{"kind", loss_kind_name(cfg.train.loss.kind)},
                 {"temperature", cfg.train.loss.temperature},
                 {"classifier", cfg.train.loss.classifier},
                 {"memory_capacity", cfg.train.loss.memory_capacity},
                 {"ema_momentum", cfg.train.loss.ema_momentum},
                 {"ema_average_bn_stats", cfg.train.loss.ema_average_bn_stats}};

  json optimizer{{"base_lr", cfg.train.base_lr},
                 {"batch_size", cfg.train.batch_size},
                 {"epochs", cfg.train.epochs},
                 {"warmup_epochs", cfg.train.warmup_epochs},
                 {"momentum", cfg.train.momentum},
                 {"weight_decay", cfg.train.weight_decay},
                 {"log_every", cfg.train.log_every},
                 {"checkpoint_every", cfg.train.checkpoint_every},
                 {"train_acc_every", cfg.train.train_acc_every}};

  json eval{{"trials", cfg.probe.trials},
            {"lr_range", {cfg.probe.lr_min, cfg.probe.lr_max}},
            {"wd_range", {cfg.probe.wd_min, cfg.probe.wd_max}},
            {"epochs", cfg.probe.epochs},
            {"batch_size", cfg.probe.batch_size},
            {"l2_normalize_features", cfg.probe.l2_normalize_features},
            {"seeds", cfg.probe.seeds},
            {"val_fraction", cfg.probe.val_fraction},
            {"short_side", cfg.probe.short_side}};

  json analysis{{"pair_budget", cfg.train.analysis.pair_budget},
                {"sparsity_eps", cfg.train.analysis.sparsity_eps},
                {"coding_precision_sq", cfg.train.analysis.coding_precision_sq},
                {"hook_every", cfg.train.analysis.hook_every}};

  json io{{"output_dir", cfg.io.output_dir},
          {"run_name", cfg.io.run_name},
          {"seed", cfg.io.seed},
          {"precision", cfg.io.precision}};

  return json{{"data", data},         {"augment", augment}, {"model", model},
              {"objective", objective}, {"optimizer", optimizer}, {"eval", eval},
              {"analysis", analysis}, {"io", io}};
}

Dataset materialize_dataset(const DataConfig& data) {
  if (data.kind == "trxd") return load_trxd(data.path);
  return generate_synthetic(data.synthetic);
}

Dataset load_dataset_argument(const std::string& path) {
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".trxd") return load_trxd(path);
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open dataset argument " + path);
  nlohmann::json doc;
  try {
    is >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  DataConfig data;
  parse_data(doc, data);
  return materialize_dataset(data);
}

}  // namespace trex
