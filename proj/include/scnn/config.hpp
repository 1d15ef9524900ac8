#pragma once

// JSON experiment configuration. Every parse error names the offending field
// by its JSON path, e.g. "network.stages[1].pool.mode".
//
// {
//   "network": {
//     "input":   {"channels": 1, "height": 28, "width": 28},
//     "classes": 10,
//     "stages": [
//       {"conv": {"out_channels": 20, "kernel": 5, "stride": 1, "pad": 0, "activation": "relu"},
//        "pool": {"window": 2, "stride": 2, "mode": "max", "ceil_mode": false, "lrn": false}}
//     ]
//   },
//   "si": "0",
//   "data":  {"source": "mnist", "dir": "/data/mnist"},
//   "train": {"batch_size": 100, "max_iterations": 10000, "base_lr": 0.001, ...},
//   "output_dir": "runs/mnist"
// }
//
// "kernel" is N or [h, w]; "pad" is N or [top, bottom, left, right]; "lrn" is
// false, true (defaults) or {"local_size", "alpha", "beta", "k"}.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>

#include "json.hpp"
#include "scnn/network.hpp"
#include "scnn/optimize.hpp"

namespace scnn {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& message)
      : std::runtime_error("config field '" + field + "': " + message), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

enum class Precision { f32, f64 };

inline const char* to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }
inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "sigmoid"; }
inline const char* to_string(PoolMode m) { return m == PoolMode::max ? "max" : "avg"; }
inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd_momentum"; }
inline const char* to_string(InitMethod m) { return m == InitMethod::msra ? "msra" : "xavier"; }

struct SyntheticConfig {
  SyntheticKind kind = SyntheticKind::multiscale;
  std::size_t train_samples = 400;
  std::size_t test_samples = 200;
  std::size_t image_size = 16;
  std::uint64_t seed = 7;
};

struct DataConfig {
  DataSource source = DataSource::synthetic;
  std::string dir;  // empty: resolved from --data-dir or SCNN_DATA_DIR
  bool subtract_mean = false;
  SyntheticConfig synthetic;
};

struct ExperimentConfig {
  NetworkSpec network;
  ShortcutIndicator si;
  DataConfig data;
  TrainConfig train;
  Precision precision = Precision::f32;
  std::size_t eval_interval = 0;  // 0: evaluate only at the end
  std::size_t log_interval = 100;
  std::string output_dir = "out";
};

namespace detail {

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  const json& raw(const std::string& key) const {
    if (!j_.contains(key)) throw ConfigError(field(key), "missing required field");
    return j_.at(key);
  }

  void allow(std::initializer_list<const char*> keys) const {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!ok.count(it.key())) throw ConfigError(field(it.key()), "unknown field");
    }
  }

  std::size_t count(const std::string& key, std::optional<std::size_t> def = std::nullopt,
                    std::size_t min = 0) const {
    if (!has(key)) {
      if (def) return *def;
      throw ConfigError(field(key), "missing required field");
    }
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < static_cast<long long>(min)) {
      throw ConfigError(field(key), "expected an integer >= " + std::to_string(min));
    }
    return v.get<std::size_t>();
  }

  double number(const std::string& key, std::optional<double> def = std::nullopt) const {
    if (!has(key)) {
      if (def) return *def;
      throw ConfigError(field(key), "missing required field");
    }
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(field(key), "expected a number");
    return v.get<double>();
  }

  bool boolean(const std::string& key, bool def) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(field(key), "expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, std::optional<std::string> def = std::nullopt) const {
    if (!has(key)) {
      if (def) return *def;
      throw ConfigError(field(key), "missing required field");
    }
    const auto& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(field(key), "expected a string");
    return v.get<std::string>();
  }

  template <typename E>
  E choice(const std::string& key, std::initializer_list<std::pair<const char*, E>> options,
           std::optional<E> def = std::nullopt) const {
    if (!has(key) && def) return *def;
    const std::string s = string(key);
    std::string allowed;
    for (const auto& [name, value] : options) {
      if (s == name) return value;
      allowed += std::string(allowed.empty() ? "" : ", ") + name;
    }
    throw ConfigError(field(key), "unknown value \"" + s + "\" (expected one of: " + allowed + ")");
  }

 private:
  const json& j_;
  std::string path_;
};

inline std::pair<std::size_t, std::size_t> read_pair(const json& v, const std::string& field) {
  if (v.is_number_integer() && v.get<long long>() > 0) return {v.get<std::size_t>(), v.get<std::size_t>()};
  if (v.is_array() && v.size() == 2 && v[0].is_number_integer() && v[1].is_number_integer() &&
      v[0].get<long long>() > 0 && v[1].get<long long>() > 0) {
    return {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
  }
  throw ConfigError(field, "expected a positive integer or [h, w]");
}

inline Padding read_padding(const json& v, const std::string& field) {
  if (v.is_number_integer() && v.get<long long>() >= 0) return Padding::uniform(v.get<std::size_t>());
  if (v.is_array() && v.size() == 4) {
    std::size_t p[4];
    for (std::size_t i = 0; i < 4; ++i) {
      if (!v[i].is_number_integer() || v[i].get<long long>() < 0) break;
      p[i] = v[i].get<std::size_t>();
      if (i == 3) return {p[0], p[1], p[2], p[3]};
    }
  }
  throw ConfigError(field, "expected a non-negative integer or [top, bottom, left, right]");
}

}  // namespace detail

inline NetworkSpec network_from_json(const json& j, const std::string& path = "network") {
  detail::Reader r(j, path);
  r.allow({"input", "classes", "stages"});
  NetworkSpec spec;
  {
    detail::Reader in(r.raw("input"), r.field("input"));
    in.allow({"channels", "height", "width"});
    spec.input = {in.count("channels", std::nullopt, 1), in.count("height", std::nullopt, 1),
                  in.count("width", std::nullopt, 1)};
  }
  spec.classes = r.count("classes", std::nullopt, 2);
  const json& stages = r.raw("stages");
  if (!stages.is_array() || stages.empty()) throw ConfigError(r.field("stages"), "expected a non-empty array");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string sp = r.field("stages") + "[" + std::to_string(i) + "]";
    detail::Reader st(stages[i], sp);
    st.allow({"conv", "pool"});
    Stage stage;
    {
      detail::Reader c(st.raw("conv"), st.field("conv"));
      c.allow({"out_channels", "kernel", "stride", "pad", "activation"});
      stage.conv.out_channels = c.count("out_channels", std::nullopt, 1);
      std::tie(stage.conv.kernel_h, stage.conv.kernel_w) = detail::read_pair(c.raw("kernel"), c.field("kernel"));
      stage.conv.stride = c.count("stride", 1, 1);
      if (c.has("pad")) stage.conv.pad = detail::read_padding(c.raw("pad"), c.field("pad"));
      stage.conv.activation = c.choice<Activation>(
          "activation", {{"relu", Activation::relu}, {"sigmoid", Activation::sigmoid}}, Activation::relu);
    }
    {
      detail::Reader p(st.raw("pool"), st.field("pool"));
      p.allow({"window", "stride", "mode", "ceil_mode", "lrn"});
      stage.pool.params.window = p.count("window", std::nullopt, 1);
      stage.pool.params.stride = p.count("stride", stage.pool.params.window, 1);
      stage.pool.params.mode =
          p.choice<PoolMode>("mode", {{"max", PoolMode::max}, {"avg", PoolMode::avg}}, PoolMode::max);
      stage.pool.params.ceil_mode = p.boolean("ceil_mode", false);
      if (p.has("lrn")) {
        const json& l = p.raw("lrn");
        if (l.is_boolean()) {
          if (l.get<bool>()) stage.pool.lrn = LrnConfig{};
        } else {
          detail::Reader lr(l, p.field("lrn"));
          lr.allow({"local_size", "alpha", "beta", "k"});
          LrnConfig cfg;
          cfg.local_size = lr.count("local_size", cfg.local_size, 1);
          cfg.alpha = lr.number("alpha", cfg.alpha);
          cfg.beta = lr.number("beta", cfg.beta);
          cfg.k = lr.number("k", cfg.k);
          stage.pool.lrn = cfg;
        }
      }
    }
    spec.stages.push_back(stage);
  }
  try {
    validate_spec(spec);
  } catch (const SpecError& e) {
    throw ConfigError(path, e.what());
  }
  return spec;
}

inline json network_to_json(const NetworkSpec& spec) {
  json stages = json::array();
  for (const auto& st : spec.stages) {
    json pool = {{"window", st.pool.params.window},
                 {"stride", st.pool.params.stride},
                 {"mode", to_string(st.pool.params.mode)},
                 {"ceil_mode", st.pool.params.ceil_mode}};
    if (st.pool.lrn) {
      pool["lrn"] = {{"local_size", st.pool.lrn->local_size},
                     {"alpha", st.pool.lrn->alpha},
                     {"beta", st.pool.lrn->beta},
                     {"k", st.pool.lrn->k}};
    } else {
      pool["lrn"] = false;
    }
    const auto& p = st.conv.pad;
    stages.push_back({{"conv",
                       {{"out_channels", st.conv.out_channels},
                        {"kernel", {st.conv.kernel_h, st.conv.kernel_w}},
                        {"stride", st.conv.stride},
                        {"pad", {p.top, p.bottom, p.left, p.right}},
                        {"activation", to_string(st.conv.activation)}}},
                      {"pool", pool}});
  }
  return {{"input", {{"channels", spec.input.channels}, {"height", spec.input.height}, {"width", spec.input.width}}},
          {"classes", spec.classes},
          {"stages", stages}};
}

inline TrainConfig train_from_json(const json& j, Precision& precision, std::size_t& eval_interval,
                                   std::size_t& log_interval, const std::string& path = "train") {
  detail::Reader r(j, path);
  r.allow({"batch_size", "max_iterations", "base_lr", "bias_lr_multiplier", "momentum", "weight_decay",
           "optimizer", "init", "seed", "deterministic", "snapshot_interval", "threads", "precision",
           "eval_interval", "log_interval", "adam_beta1", "adam_beta2", "adam_epsilon"});
  TrainConfig c;
  c.batch_size = r.count("batch_size", c.batch_size, 1);
  c.max_iterations = r.count("max_iterations", c.max_iterations, 0);
  c.base_lr = r.number("base_lr", c.base_lr);
  c.bias_lr_multiplier = r.number("bias_lr_multiplier", c.bias_lr_multiplier);
  c.momentum = r.number("momentum", c.momentum);
  c.weight_decay = r.number("weight_decay", c.weight_decay);
  c.optimizer = r.choice<OptimizerKind>(
      "optimizer", {{"sgd_momentum", OptimizerKind::sgd_momentum}, {"adam", OptimizerKind::adam}}, c.optimizer);
  c.init = r.choice<InitMethod>("init", {{"xavier", InitMethod::xavier}, {"msra", InitMethod::msra}}, c.init);
  c.seed = r.count("seed", c.seed, 0);
  c.deterministic = r.boolean("deterministic", c.deterministic);
  c.snapshot_interval = r.count("snapshot_interval", c.snapshot_interval, 0);
  c.threads = r.count("threads", c.threads, 1);
  c.adam_beta1 = r.number("adam_beta1", c.adam_beta1);
  c.adam_beta2 = r.number("adam_beta2", c.adam_beta2);
  c.adam_epsilon = r.number("adam_epsilon", c.adam_epsilon);
  precision = r.choice<Precision>("precision", {{"f32", Precision::f32}, {"f64", Precision::f64}}, precision);
  eval_interval = r.count("eval_interval", eval_interval, 0);
  log_interval = r.count("log_interval", log_interval, 1);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
  return c;
}

inline DataConfig data_from_json(const json& j, const std::string& path = "data") {
  detail::Reader r(j, path);
  r.allow({"source", "dir", "subtract_mean", "synthetic"});
  DataConfig d;
  d.source = r.choice<DataSource>(
      "source", {{"mnist", DataSource::mnist}, {"cifar10", DataSource::cifar10}, {"synthetic", DataSource::synthetic}});
  d.dir = r.string("dir", "");
  d.subtract_mean = r.boolean("subtract_mean", false);
  if (r.has("synthetic")) {
    detail::Reader s(r.raw("synthetic"), r.field("synthetic"));
    s.allow({"kind", "train_samples", "test_samples", "image_size", "seed"});
    auto& sc = d.synthetic;
    sc.kind = s.choice<SyntheticKind>(
        "kind", {{"separable", SyntheticKind::separable}, {"multiscale", SyntheticKind::multiscale}}, sc.kind);
    sc.train_samples = s.count("train_samples", sc.train_samples, 2);
    sc.test_samples = s.count("test_samples", sc.test_samples, 2);
    sc.image_size = s.count("image_size", sc.image_size, 4);
    sc.seed = s.count("seed", sc.seed, 0);
  }
  return d;
}

inline ExperimentConfig config_from_json(const json& j) {
  detail::Reader r(j, "");
  r.allow({"network", "si", "data", "train", "output_dir"});
  ExperimentConfig cfg;
  cfg.network = network_from_json(r.raw("network"));
  const std::string si_text = r.string("si", ShortcutIndicator::none(cfg.network.pairs()).str());
  try {
    cfg.si = ShortcutIndicator::parse(si_text);
    check_indicator(cfg.network, cfg.si);
  } catch (const SpecError& e) {
    throw ConfigError("si", e.what());
  }
  cfg.data = data_from_json(r.raw("data"));
  if (r.has("train")) {
    cfg.train = train_from_json(r.raw("train"), cfg.precision, cfg.eval_interval, cfg.log_interval);
  }
  cfg.output_dir = r.string("output_dir", cfg.output_dir);
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

}  // namespace scnn
