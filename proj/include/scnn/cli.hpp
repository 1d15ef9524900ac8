#pragma once

// Subcommand runners behind tools/scnn. Each returns a process exit status:
// 0 on full success, 1 when the command ran but did not succeed (failed
// gradient check, failed sweep rows), 2 on bad input (config, data, flags).
//
// Data directory resolution: --data-dir, then $SCNN_DATA_DIR, then data.dir
// from the config file.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "scnn/autograd.hpp"
#include "scnn/checkpoint.hpp"
#include "scnn/config.hpp"
#include "scnn/data.hpp"
#include "scnn/optimize.hpp"
#include "scnn/report.hpp"

namespace scnn {

inline constexpr const char* kDataDirEnv = "SCNN_DATA_DIR";
inline constexpr std::size_t kGradCheckMaxParameters = 5000;

struct RunOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::string> si;  // train/eval: one SI; sweep: "all" or a comma list
  std::optional<std::filesystem::path> data_dir;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;  // forces determinism on; the config value is kept otherwise
  std::optional<std::filesystem::path> out;
  std::size_t jobs = 1;
  double threshold = 1e-5;
  double epsilon = 1e-5;
  std::optional<std::filesystem::path> checkpoint;
  bool inject_fault = false;
};

// Applies command-line overrides on top of a parsed config.
inline void apply_overrides(ExperimentConfig& cfg, const RunOptions& opts) {
  if (opts.si) {
    try {
      cfg.si = ShortcutIndicator::parse(*opts.si);
      check_indicator(cfg.network, cfg.si);
    } catch (const SpecError& e) {
      throw ConfigError("--si", e.what());
    }
  }
  if (opts.seed) cfg.train.seed = *opts.seed;
  if (opts.deterministic) cfg.train.deterministic = true;
  if (opts.out) cfg.output_dir = opts.out->string();
}

inline std::filesystem::path resolve_data_dir(const DataConfig& data, const std::optional<std::filesystem::path>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv(kDataDirEnv); env && *env) return env;
  return data.dir;
}

struct DataSplits {
  Dataset train;
  Dataset test;
};

namespace detail {

inline std::filesystem::path find_file(const std::filesystem::path& dir, std::initializer_list<const char*> names) {
  for (const char* n : names) {
    if (std::filesystem::exists(dir / n)) return dir / n;
  }
  throw DataError("none of the expected files (" + std::string(*names.begin()) + ", ...) found in " +
                  (dir.empty() ? std::string("<no data dir>") : dir.string()));
}

}  // namespace detail

inline DataSplits load_data(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& data_dir_flag) {
  DataSplits s;
  const auto& d = cfg.data;
  if (d.source == DataSource::synthetic) {
    const auto& sc = d.synthetic;
    s.train = make_synthetic(sc.kind, sc.train_samples, sc.image_size, sc.seed);
    s.test = make_synthetic(sc.kind, sc.test_samples, sc.image_size, sc.seed + 1);
  } else {
    const auto dir = resolve_data_dir(d, data_dir_flag);
    if (dir.empty()) {
      throw DataError(std::string("no data directory: pass --data-dir, set ") + kDataDirEnv + " or data.dir");
    }
    if (d.source == DataSource::mnist) {
      using detail::find_file;
      s.train = load_mnist(find_file(dir, {"train-images-idx3-ubyte", "train-images.idx3-ubyte"}),
                           find_file(dir, {"train-labels-idx1-ubyte", "train-labels.idx1-ubyte"}));
      s.test = load_mnist(find_file(dir, {"t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"}),
                          find_file(dir, {"t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"}));
    } else {
      auto base = dir;
      if (!std::filesystem::exists(base / "data_batch_1.bin") &&
          std::filesystem::exists(base / "cifar-10-batches-bin")) {
        base /= "cifar-10-batches-bin";
      }
      std::vector<std::filesystem::path> train_files;
      for (int i = 1; i <= 5; ++i) {
        train_files.push_back(detail::find_file(base, {("data_batch_" + std::to_string(i) + ".bin").c_str()}));
      }
      s.train = load_cifar10(train_files);
      s.test = load_cifar10({detail::find_file(base, {"test_batch.bin"})});
    }
  }
  if (d.subtract_mean) {
    const auto means = channel_means(s.train);
    subtract_channel_means(s.train, means);
    subtract_channel_means(s.test, means);
  }
  if (s.train.image_shape() != cfg.network.input) {
    throw ConfigError("network.input", "network input " + cfg.network.input.str() + " does not match data " +
                                           s.train.image_shape().str());
  }
  if (s.train.classes > cfg.network.classes) {
    throw ConfigError("network.classes", "data has " + std::to_string(s.train.classes) + " classes, network " +
                                             std::to_string(cfg.network.classes));
  }
  return s;
}

template <typename T>
struct TrainOutcome {
  Parameters<T> params;
  std::vector<HistoryRow> history;
  EvalResult final_eval;
};

// Trains one experiment and, when out_dir is set, writes history.csv, the
// final checkpoint under out_dir/checkpoint and periodic snapshots under
// out_dir/snapshots/iter_<N>.
template <typename T>
TrainOutcome<T> train_experiment(const ExperimentConfig& cfg, const DataSplits& data,
                                 const std::optional<std::filesystem::path>& out_dir, std::ostream* log) {
  validate_spec(cfg.network, cfg.si);
  const ExecOptions exec{cfg.train.threads, cfg.train.deterministic};
  CheckpointManifest manifest{kCheckpointVersion, cfg.network, cfg.si, 0, cfg.precision, cfg.train.seed, "scnn"};

  EvalResult last_eval;
  TrainCallbacks<T> cb;
  cb.eval_interval = cfg.eval_interval;
  cb.evaluate = [&](std::size_t, const Parameters<T>& p) {
    last_eval = evaluate(cfg.network, cfg.si, p, data.test, 100, exec);
    return last_eval.accuracy;
  };
  if (out_dir) {
    cb.snapshot = [&](std::size_t it, const Parameters<T>& p) {
      if (it == cfg.train.max_iterations) return;
      auto m = manifest;
      m.iteration = it;
      save_checkpoint(p, m, *out_dir / "snapshots" / ("iter_" + std::to_string(it)));
    };
  }
  double window_loss = 0;
  std::size_t window = 0;
  cb.on_iteration = [&](const HistoryEntry& e) {
    window_loss += e.loss;
    ++window;
    if (!log) return;
    const bool report = (cfg.log_interval && e.iteration % cfg.log_interval == 0) || e.test_accuracy;
    if (!report) return;
    *log << "iter " << e.iteration << " loss " << format_fixed(window_loss / static_cast<double>(window), 6);
    if (e.test_accuracy) *log << " test_accuracy " << format_percent(*e.test_accuracy) << '%';
    *log << '\n';
    window_loss = 0;
    window = 0;
  };

  auto res = train<T>(cfg.network, cfg.si, data.train, cfg.train, cb);
  TrainOutcome<T> out{std::move(res.params), summarize_history(res.history, cfg.log_interval), {}};
  if (res.history.empty()) {
    last_eval = evaluate(cfg.network, cfg.si, out.params, data.test, 100, exec);
    out.history.push_back({0, std::nullopt, last_eval.accuracy});
  }
  out.final_eval = last_eval;
  if (out_dir) {
    write_text(*out_dir / "history.csv", history_csv(out.history));
    manifest.iteration = cfg.train.max_iterations;
    save_checkpoint(out.params, manifest, *out_dir / "checkpoint");
  }
  return out;
}

namespace detail {

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
  } catch (const SpecError& e) {
    err << "network error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
  }
  return 2;
}

inline ExperimentConfig require_config(const RunOptions& opts) {
  if (!opts.config) throw ConfigError("--config", "a config file is required");
  auto cfg = load_config(*opts.config);
  apply_overrides(cfg, opts);
  return cfg;
}

}  // namespace detail

inline int run_train(const RunOptions& opts, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    const auto cfg = detail::require_config(opts);
    const auto data = load_data(cfg, opts.data_dir);
    const std::filesystem::path dir = cfg.output_dir;
    const auto start = std::chrono::steady_clock::now();
    EvalResult ev;
    if (cfg.precision == Precision::f32) {
      ev = train_experiment<float>(cfg, data, dir, &out).final_eval;
    } else {
      ev = train_experiment<double>(cfg, data, dir, &out).final_eval;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out << "final: si=" << cfg.si.str() << " iterations=" << cfg.train.max_iterations
        << " test_accuracy=" << format_percent(ev.accuracy) << "% (" << ev.correct << '/' << ev.total << ") time="
        << format_fixed(secs, 1) << "s out=" << dir.string() << '\n';
    return 0;
  });
}

inline int run_eval(const RunOptions& opts, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    const auto cfg = detail::require_config(opts);
    const auto dir = opts.checkpoint ? *opts.checkpoint : std::filesystem::path(cfg.output_dir) / "checkpoint";
    const auto data = load_data(cfg, opts.data_dir);
    const ExecOptions exec{cfg.train.threads, true};
    const auto man = read_manifest(dir);
    EvalResult ev;
    if (man.precision == Precision::f32) {
      const auto ck = load_checkpoint<float>(dir, cfg.network, cfg.si);
      ev = evaluate(cfg.network, cfg.si, ck.params, data.test, 100, exec);
    } else {
      const auto ck = load_checkpoint<double>(dir, cfg.network, cfg.si);
      ev = evaluate(cfg.network, cfg.si, ck.params, data.test, 100, exec);
    }
    out << "eval: si=" << cfg.si.str() << " iteration=" << man.iteration
        << " test_accuracy=" << format_percent(ev.accuracy) << "% (" << ev.correct << '/' << ev.total << ")\n";
    return 0;
  });
}

// "all" expands to every SI of the config's depth; otherwise a comma list.
inline std::vector<ShortcutIndicator> parse_si_set(const std::string& text, std::size_t pairs) {
  std::vector<ShortcutIndicator> out;
  if (text == "all") return ShortcutIndicator::all(pairs);
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(ShortcutIndicator::parse(item));
      if (out.back().length() != 2 * pairs - 1) {
        throw SpecError("SI '" + item + "' has length " + std::to_string(item.size()) + ", expected " +
                        std::to_string(2 * pairs - 1));
      }
    } catch (const SpecError& e) {
      throw ConfigError("--si", e.what());
    }
  }
  if (out.empty()) throw ConfigError("--si", "empty SI list");
  return out;
}

// Trains one network per SI with identical seed and hyperparameters. A failed
// run becomes an error row and the sweep continues.
inline std::vector<SweepRow> sweep(const ExperimentConfig& base, const std::vector<ShortcutIndicator>& set,
                                   const DataSplits& data, std::size_t jobs,
                                   const std::optional<std::filesystem::path>& out_dir, std::ostream* log) {
  std::vector<SweepRow> rows(set.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < set.size(); i = next++) {
      auto cfg = base;
      cfg.si = set[i];
      rows[i].si = cfg.si.str();
      std::optional<std::filesystem::path> dir;
      if (out_dir) dir = *out_dir / ("si_" + cfg.si.str());
      try {
        rows[i].accuracy = cfg.precision == Precision::f32
                               ? train_experiment<float>(cfg, data, dir, nullptr).final_eval.accuracy
                               : train_experiment<double>(cfg, data, dir, nullptr).final_eval.accuracy;
      } catch (const std::exception& e) {
        rows[i].error = e.what();
      }
      if (log) {
        std::lock_guard lock(log_mu);
        *log << "si=" << rows[i].si << ' '
             << (rows[i].accuracy ? "test_accuracy=" + format_percent(*rows[i].accuracy) + "%"
                                  : "error: " + rows[i].error)
             << '\n';
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, set.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return rows;
}

inline int run_sweep(const RunOptions& opts, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    auto o = opts;
    o.si.reset();
    const auto cfg = detail::require_config(o);
    const auto set = parse_si_set(opts.si.value_or("all"), cfg.network.pairs());
    if (opts.jobs == 0) throw ConfigError("--jobs", "must be at least 1");
    const auto data = load_data(cfg, opts.data_dir);
    const std::filesystem::path dir = cfg.output_dir;
    const auto rows = sweep(cfg, set, data, opts.jobs, dir, &out);
    write_text(dir / "sweep.csv", sweep_csv(rows));
    std::size_t failed = 0;
    for (const auto& r : rows) failed += r.accuracy ? 0 : 1;
    out << "sweep: " << rows.size() << " runs, " << failed << " failed, table " << (dir / "sweep.csv").string()
        << '\n';
    return failed ? 1 : 0;
  });
}

// Default gradient-check network: 1x6x6 input, conv 3x3 (pad 1) to 2 maps,
// pool 2/2, conv 2x2 to 3 maps, pool 2/2, 3 classes. Shapes 6x6x2, 3x3x2,
// 2x2x3, 1x1x3.
inline NetworkSpec tiny_gradcheck_spec(Activation act = Activation::relu, PoolMode mode = PoolMode::max,
                                       bool lrn_on_last_pool = false) {
  NetworkSpec spec;
  spec.input = {1, 6, 6};
  spec.classes = 3;
  Stage s1;
  s1.conv = {2, 3, 3, 1, Padding::uniform(1), act};
  s1.pool.params = {2, 2, mode, false};
  Stage s2;
  s2.conv = {3, 2, 2, 1, Padding{}, act};
  s2.pool.params = {2, 2, mode, false};
  // Strong normalization so the check exercises the LRN derivative.
  if (lrn_on_last_pool) s2.pool.lrn = LrnConfig{3, 1.0, 0.75, 2.0};
  spec.stages = {s1, s2};
  return spec;
}

// Perturbs the analytic gradient so a correct checker must fail.
inline void inject_gradient_fault(Parameters<double>& grads) {
  auto w = grads.conv.front().weight.values();
  for (auto& v : w) v *= 1.01;
  w[0] += 1e-3;
}

inline int run_gradcheck(const RunOptions& opts, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    struct Variant {
      std::string label;
      NetworkSpec spec;
    };
    std::vector<Variant> variants;
    if (opts.config) {
      variants.push_back({"config", load_config(*opts.config).network});
    } else {
      for (auto act : {Activation::relu, Activation::sigmoid}) {
        for (auto mode : {PoolMode::max, PoolMode::avg}) {
          for (bool lrn : {false, true}) {
            variants.push_back({std::string(to_string(act)) + "/" + to_string(mode) + (lrn ? "/lrn" : ""),
                                tiny_gradcheck_spec(act, mode, lrn)});
          }
        }
      }
    }
    const std::uint64_t seed = opts.seed.value_or(1);
    if (!(opts.epsilon > 0)) throw ConfigError("--epsilon", "must be positive");
    if (!(opts.threshold > 0)) throw ConfigError("--threshold", "must be positive");

    std::ostringstream text;
    text << "gradient check: central differences, epsilon=" << opts.epsilon << ", threshold=" << opts.threshold
         << ", seed=" << seed << "\n\n";
    bool ok = true;
    std::size_t runs = 0;
    for (const auto& v : variants) {
      const auto pairs = v.spec.pairs();
      std::vector<ShortcutIndicator> sis;
      if (opts.si) {
        sis = parse_si_set(*opts.si, pairs);
      } else {
        sis = ShortcutIndicator::all(pairs);
      }
      const auto largest = Parameters<double>::zeros(v.spec, ShortcutIndicator::all(pairs).back());
      if (parameter_count(largest) > kGradCheckMaxParameters) {
        throw ConfigError("network", "gradient check is limited to " + std::to_string(kGradCheckMaxParameters) +
                                         " parameters (this network has up to " +
                                         std::to_string(parameter_count(largest)) +
                                         "); shrink channels, kernels or input size");
      }
      for (const auto& si : sis) {
        GradCheckOptions go;
        if (opts.inject_fault) go.corrupt = inject_gradient_fault;
        const auto report = grad_check(v.spec, si, seed, opts.epsilon, go);
        const bool pass = report.passed(opts.threshold);
        ok = ok && pass;
        ++runs;
        text << gradcheck_table(v.label + " si=" + si.str(), report, opts.threshold) << '\n';
        out << v.label << " si=" << si.str() << " max_rel=" << report.max_rel << (pass ? " PASS" : " FAIL")
            << (report.dead_region() ? " (dead group)" : "") << '\n';
      }
    }
    text << (ok ? "PASS" : "FAIL") << ": " << runs << " checks\n";
    const std::filesystem::path dir = opts.out.value_or(".");
    write_text(dir / "gradcheck.txt", text.str());
    out << (ok ? "PASS" : "FAIL") << ": " << runs << " checks, report " << (dir / "gradcheck.txt").string() << '\n';
    return ok ? 0 : 1;
  });
}

inline int inspect_checkpoint(const std::filesystem::path& dir, std::ostream& out = std::cout,
                              std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    const auto ck = load_checkpoint<double>(dir);
    const auto& m = ck.manifest;
    const auto shapes = validate_spec(m.network, m.si);
    out << "checkpoint " << dir.string() << "\n  format_version " << m.format_version << "\n  created_by "
        << m.created_by << "\n  precision " << to_string(m.precision) << "\n  seed " << m.seed << "\n  iteration "
        << m.iteration << "\n  si " << m.si.str() << "\n  input " << m.network.input.str() << "\n";
    for (std::size_t l = 0; l < shapes.size(); ++l) {
      out << "  h" << l + 1 << ' ' << shapes[l].str() << (m.si.selects(l + 1) ? "  -> fcl" : "") << '\n';
    }
    out << "  fcl " << fcl_size(m.network, m.si) << "\n  classes " << m.network.classes << "\n  parameters "
        << parameter_count(ck.params) << '\n';
    char line[200];
    for (const auto& a : named_arrays(ck.params)) {
      const auto v = a.tensor->values();
      double lo = v[0], hi = v[0], sum = 0, sq = 0;
      for (double x : v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
        sum += x;
        sq += x * x;
      }
      std::snprintf(line, sizeof line, "  %-14s %-16s min %+.4e max %+.4e mean %+.4e l2 %.4e\n", a.name.c_str(),
                    shape_string(a.tensor->shape()).c_str(), lo, hi, sum / static_cast<double>(v.size()),
                    std::sqrt(sq));
      out << line;
    }
    return 0;
  });
}

}  // namespace scnn
