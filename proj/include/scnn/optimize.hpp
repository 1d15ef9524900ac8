#pragma once

// Initialization, optimizers, the mini-batch training loop and evaluation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "scnn/autograd.hpp"
#include "scnn/data.hpp"
#include "scnn/network.hpp"

namespace scnn {

enum class OptimizerKind { sgd_momentum, adam };
enum class InitMethod { xavier, msra };

struct TrainConfig {
  std::size_t batch_size = 100;
  std::size_t max_iterations = 1000;  // mini-batch steps
  double base_lr = 0.001;
  double bias_lr_multiplier = 2.0;
  double momentum = 0.9;
  double weight_decay = 0.0;
  OptimizerKind optimizer = OptimizerKind::sgd_momentum;
  InitMethod init = InitMethod::xavier;
  std::uint64_t seed = 1;
  bool deterministic = true;
  std::size_t snapshot_interval = 0;  // 0: only the final snapshot
  std::size_t threads = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
    if (!(base_lr > 0.0)) throw std::invalid_argument("base_lr must be positive");
    if (!(bias_lr_multiplier > 0.0)) throw std::invalid_argument("bias_lr_multiplier must be positive");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be non-negative");
    if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  }
};

// Draws fan-in scaled weights: xavier ~ U(-sqrt(3/fan_in), sqrt(3/fan_in)),
// msra ~ N(0, 2/fan_in). Values are drawn in double so both precisions see
// the same initialization.
template <typename T>
void fill_init(std::span<T> values, InitMethod method, std::size_t fan_in, std::mt19937_64& rng) {
  const double f = static_cast<double>(fan_in);
  if (method == InitMethod::xavier) {
    const double a = std::sqrt(3.0 / f);
    std::uniform_real_distribution<double> dist(-a, a);
    for (auto& v : values) v = static_cast<T>(dist(rng));
  } else {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / f));
    for (auto& v : values) v = static_cast<T>(dist(rng));
  }
}

// Conv layers are drawn first, in order, then the output layer, so conv
// initialization does not depend on the shortcut indicator. Biases are 0.
template <typename T>
Parameters<T> init_params(const NetworkSpec& spec, const ShortcutIndicator& si, InitMethod method,
                          std::uint64_t seed) {
  auto p = Parameters<T>::zeros(spec, si);
  std::mt19937_64 rng(seed);
  for (auto& a : named_arrays(p)) {
    if (a.is_bias) continue;
    const auto& shape = a.tensor->shape();
    fill_init<T>(a.tensor->values(), method, shape_product(shape) / shape[0], rng);
  }
  return p;
}

template <typename T>
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd_momentum;
  Parameters<T> first;   // sgd: velocity; adam: first moment
  Parameters<T> second;  // adam: second moment
  std::uint64_t step = 0;

  static OptimizerState create(OptimizerKind kind, const NetworkSpec& spec, const ShortcutIndicator& si) {
    OptimizerState s;
    s.kind = kind;
    s.first = Parameters<T>::zeros(spec, si);
    if (kind == OptimizerKind::adam) s.second = Parameters<T>::zeros(spec, si);
    return s;
  }
};

namespace detail {

template <typename T>
void require_same_layout(const Parameters<T>& a, const Parameters<T>& b, const char* what) {
  auto x = named_arrays(a);
  auto y = named_arrays(b);
  if (x.size() != y.size()) throw ShapeError(std::string(what) + ": parameter count mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].tensor->shape() != y[i].tensor->shape()) {
      throw ShapeError(std::string(what) + ": shape mismatch in " + x[i].name);
    }
  }
}

}  // namespace detail

// Weights: v <- mu v - lr (g + lambda theta); theta <- theta + v.
// Biases use lr * bias_lr_multiplier and no decay.
template <typename T>
void sgd_step(Parameters<T>& params, const Gradients<T>& grads, OptimizerState<T>& state,
              const TrainConfig& cfg) {
  detail::require_same_layout(params, grads, "sgd_step");
  detail::require_same_layout(params, state.first, "sgd_step");
  auto p = named_arrays(params);
  auto g = named_arrays(grads);
  auto v = named_arrays(state.first);
  const T mu = static_cast<T>(cfg.momentum);
  for (std::size_t a = 0; a < p.size(); ++a) {
    const T lr = static_cast<T>(p[a].is_bias ? cfg.base_lr * cfg.bias_lr_multiplier : cfg.base_lr);
    const T decay = p[a].is_bias ? T{0} : static_cast<T>(cfg.weight_decay);
    auto pv = p[a].tensor->values();
    const auto gv = g[a].tensor->values();
    auto vv = v[a].tensor->values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      vv[i] = mu * vv[i] - lr * (gv[i] + decay * pv[i]);
      pv[i] += vv[i];
    }
  }
  ++state.step;
}

// Bias-corrected Adam. Weight decay is folded into the weight gradients
// before the moment updates.
template <typename T>
void adam_step(Parameters<T>& params, const Gradients<T>& grads, OptimizerState<T>& state,
               const TrainConfig& cfg) {
  detail::require_same_layout(params, grads, "adam_step");
  detail::require_same_layout(params, state.first, "adam_step");
  detail::require_same_layout(params, state.second, "adam_step");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(cfg.adam_beta1);
  const T b2 = static_cast<T>(cfg.adam_beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg.adam_beta1, t));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg.adam_beta2, t));
  const T eps = static_cast<T>(cfg.adam_epsilon);
  auto p = named_arrays(params);
  auto g = named_arrays(grads);
  auto m = named_arrays(state.first);
  auto v = named_arrays(state.second);
  for (std::size_t a = 0; a < p.size(); ++a) {
    const T lr = static_cast<T>(p[a].is_bias ? cfg.base_lr * cfg.bias_lr_multiplier : cfg.base_lr);
    const T decay = p[a].is_bias ? T{0} : static_cast<T>(cfg.weight_decay);
    auto pv = p[a].tensor->values();
    const auto gv = g[a].tensor->values();
    auto mv = m[a].tensor->values();
    auto vv = v[a].tensor->values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const T gi = gv[i] + decay * pv[i];
      mv[i] = b1 * mv[i] + (T{1} - b1) * gi;
      vv[i] = b2 * vv[i] + (T{1} - b2) * gi * gi;
      const T mhat = mv[i] / c1;
      const T vhat = vv[i] / c2;
      pv[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template <typename T>
void optimizer_step(Parameters<T>& params, const Gradients<T>& grads, OptimizerState<T>& state,
                    const TrainConfig& cfg) {
  if (state.kind == OptimizerKind::adam) {
    adam_step(params, grads, state, cfg);
  } else {
    sgd_step(params, grads, state, cfg);
  }
}

struct EvalResult {
  double accuracy = 0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

template <typename T>
EvalResult evaluate(const NetworkSpec& spec, const ShortcutIndicator& si, const Parameters<T>& params,
                    const Dataset& ds, std::size_t batch_size = 100, const ExecOptions& exec = {}) {
  if (ds.image_shape() != spec.input) {
    throw ShapeError("dataset images " + ds.image_shape().str() + " do not match network input " +
                     spec.input.str());
  }
  EvalResult res;
  res.total = ds.size();
  res.confusion.assign(spec.classes, std::vector<std::size_t>(spec.classes, 0));
  for (std::size_t begin = 0; begin < ds.size(); begin += batch_size) {
    const std::size_t end = std::min(ds.size(), begin + batch_size);
    const auto batch = make_batch<T>(ds, begin, end);
    const auto cache = forward(spec, params, si, batch.images, exec);
    for (std::size_t l = 0; l < end - begin; ++l) {
      const int truth = batch.labels[l];
      if (truth < 0 || static_cast<std::size_t>(truth) >= spec.classes) {
        throw ShapeError("label " + std::to_string(truth) + " outside the network's classes");
      }
      const std::size_t pred = argmax(cache.probs.slice(l));
      ++res.confusion[static_cast<std::size_t>(truth)][pred];
      if (pred == static_cast<std::size_t>(truth)) ++res.correct;
    }
  }
  res.accuracy = res.total ? static_cast<double>(res.correct) / static_cast<double>(res.total) : 0.0;
  return res;
}

struct HistoryEntry {
  std::size_t iteration = 0;
  double loss = 0;
  std::optional<double> test_accuracy;
};

template <typename T>
struct TrainCallbacks {
  // Called every eval_interval iterations and after the last one; returns an
  // accuracy in [0, 1] that is recorded in the history.
  std::size_t eval_interval = 0;
  std::function<double(std::size_t, const Parameters<T>&)> evaluate;
  // Called every cfg.snapshot_interval iterations and after the last one.
  std::function<void(std::size_t, const Parameters<T>&)> snapshot;
  std::function<void(const HistoryEntry&)> on_iteration;
};

template <typename T>
struct TrainResult {
  Parameters<T> params;
  std::vector<HistoryEntry> history;
};

// Epoch-wise shuffled mini-batch source. Batches that cross an epoch boundary
// are completed from the next (reshuffled) epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), 0);
    reshuffle();
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
      if (cursor_ == order_.size()) reshuffle();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

  std::size_t epoch() const { return epoch_; }

 private:
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
    ++epoch_;
  }

  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

// Stochastic shortcut backpropagation: per step draw a mini-batch, run the
// forward pass, the shortcut backward pass and one optimizer update.
template <typename T>
TrainResult<T> train(const NetworkSpec& spec, const ShortcutIndicator& si, const Dataset& ds,
                     const TrainConfig& cfg, const TrainCallbacks<T>& cb = {},
                     std::optional<Parameters<T>> initial = std::nullopt) {
  cfg.validate();
  validate_spec(spec, si);
  if (ds.size() == 0) throw DataError("training set is empty");
  if (ds.image_shape() != spec.input) {
    throw ShapeError("dataset images " + ds.image_shape().str() + " do not match network input " +
                     spec.input.str());
  }
  if (ds.classes > spec.classes) throw ShapeError("dataset has more classes than the network output");

  TrainResult<T> res;
  res.params = initial ? std::move(*initial) : init_params<T>(spec, si, cfg.init, cfg.seed);
  check_params(spec, si, res.params);
  auto state = OptimizerState<T>::create(cfg.optimizer, spec, si);
  BatchSampler sampler(ds.size(), cfg.seed ^ 0x5851f42d4c957f2dULL);
  const ExecOptions exec{cfg.threads, cfg.deterministic};

  for (std::size_t it = 1; it <= cfg.max_iterations; ++it) {
    const auto idx = sampler.next(cfg.batch_size);
    const auto batch = make_batch<T>(ds, idx);
    const auto targets = one_hot_batch<T>(batch.labels, spec.classes);
    const auto cache = forward(spec, res.params, si, batch.images, exec);
    HistoryEntry entry{it, static_cast<double>(mean_cross_entropy(cache.probs, targets)), std::nullopt};
    const auto grads = backward(spec, res.params, si, cache, targets, exec).grads;
    optimizer_step(res.params, grads, state, cfg);

    const bool last = it == cfg.max_iterations;
    if (cb.evaluate && ((cb.eval_interval && it % cb.eval_interval == 0) || last)) {
      entry.test_accuracy = cb.evaluate(it, res.params);
    }
    res.history.push_back(entry);
    if (cb.on_iteration) cb.on_iteration(entry);
    if (cb.snapshot && ((cfg.snapshot_interval && it % cfg.snapshot_interval == 0) || last)) {
      cb.snapshot(it, res.params);
    }
  }
  return res;
}

}  // namespace scnn
