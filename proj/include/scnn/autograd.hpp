#pragma once

// Loss, sensitivities and parameter derivatives for shortcut CNNs, plus a
// central-difference gradient checker.
//
// Backward recursion, per sample, for k = r ... 1:
//   d_fcl     = W_out^T (o - y)
//   d_{2k}    = [sum_j full_corr(d_{2k+1,j}, W_{ij}^{2k+1})] + a_{2k} * slice_{2k}(d_fcl)
//   d_{2k-1}  = f'(u_{2k-1}) o (unpool(lrn'(d_{2k})) + a_{2k-1} * slice_{2k-1}(d_fcl))
// The FCL is a plain concatenation, so no activation derivative is applied to
// d_fcl, and f' multiplies the shortcut term too because the FCL stores
// post-activation values. Parameter gradients are averaged over the batch.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "scnn/network.hpp"

namespace scnn {

inline constexpr double kLogClamp = 1e-12;

// -sum_c y_c log(max(o_c, 1e-12)).
template <typename T>
T cross_entropy(std::span<const T> o, std::span<const T> y) {
  if (o.size() != y.size()) throw ShapeError("cross_entropy length mismatch");
  T loss = T{0};
  for (std::size_t c = 0; c < o.size(); ++c) {
    if (y[c] != T{0}) loss -= y[c] * std::log(std::max(o[c], static_cast<T>(kLogClamp)));
  }
  return loss;
}

template <typename T>
T cross_entropy(const std::vector<T>& o, const std::vector<T>& y) {
  return cross_entropy(std::span<const T>(o), std::span<const T>(y));
}

// Mean over the batch rows of `probs` and `targets` (both batch x classes).
template <typename T>
T mean_cross_entropy(const Tensor<T>& probs, const Tensor<T>& targets) {
  if (probs.shape() != targets.shape()) throw ShapeError("loss shape mismatch");
  T sum = T{0};
  for (std::size_t l = 0; l < probs.dim(0); ++l) sum += cross_entropy(probs.slice(l), targets.slice(l));
  return sum / static_cast<T>(probs.dim(0));
}

template <typename T>
std::vector<T> output_delta(std::span<const T> o, std::span<const T> y) {
  if (o.size() != y.size()) throw ShapeError("output_delta length mismatch");
  std::vector<T> d(o.size());
  for (std::size_t i = 0; i < o.size(); ++i) d[i] = o[i] - y[i];
  return d;
}

template <typename T>
std::vector<T> output_delta(const std::vector<T>& o, const std::vector<T>& y) {
  return output_delta(std::span<const T>(o), std::span<const T>(y));
}

// Splits one sample's FCL sensitivity into per-layer slices, in FCL order.
// Unselected layers get an empty tensor (an implicit zero slice).
template <typename T>
std::vector<Tensor<T>> split_fcl_delta(std::span<const T> delta_fcl, const NetworkSpec& spec,
                                       const ShortcutIndicator& si) {
  const auto shapes = validate_spec(spec, si);
  const auto layout = fcl_layout(shapes, si);
  if (delta_fcl.size() != layout.total) {
    throw ShapeError("FCL delta has length " + std::to_string(delta_fcl.size()) + ", expected " +
                     std::to_string(layout.total));
  }
  std::vector<Tensor<T>> slices(shapes.size());
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    if (layout.length[k] == 0) continue;
    const auto& s = shapes[k];
    const auto* p = delta_fcl.data() + layout.offset[k];
    slices[k] = Tensor<T>({s.channels, s.height, s.width}, std::vector<T>(p, p + layout.length[k]));
  }
  return slices;
}

template <typename T>
std::vector<T> concat_fcl_slices(const std::vector<Tensor<T>>& slices) {
  std::vector<T> out;
  for (const auto& s : slices) out.insert(out.end(), s.values().begin(), s.values().end());
  return out;
}

template <typename T>
struct Sensitivities {
  Tensor<T> output;                 // batch x classes, o - y
  Tensor<T> fcl;                    // batch x fcl_size
  std::vector<Tensor<T>> layers;    // layers[k-1]: d_k, batch x channels x H x W
  std::vector<Tensor<T>> fc_slices;  // layers[k-1]: batch x slice length, empty if unselected
};

template <typename T>
struct BackwardResult {
  Sensitivities<T> sens;
  Gradients<T> grads;
};

template <typename T>
void add_into(Parameters<T>& dst, const Parameters<T>& src) {
  auto d = named_arrays(dst);
  auto s = named_arrays(src);
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto dv = d[i].tensor->values();
    auto sv = s[i].tensor->values();
    for (std::size_t j = 0; j < dv.size(); ++j) dv[j] += sv[j];
  }
}

template <typename T>
void scale_into(Parameters<T>& p, T factor) {
  for (auto& a : named_arrays(p)) {
    for (auto& v : a.tensor->values()) v *= factor;
  }
}

// `targets` is batch x classes (one-hot rows). Returns batch-averaged
// gradients.
template <typename T>
BackwardResult<T> backward(const NetworkSpec& spec, const Parameters<T>& params,
                           const ShortcutIndicator& si, const ForwardCache<T>& cache,
                           const Tensor<T>& targets, const ExecOptions& exec = {}) {
  if (!(cache.si == si) || cache.shapes != validate_spec(spec, si)) {
    throw ShapeError("forward cache was produced for a different network or indicator");
  }
  check_params(spec, si, params);
  const std::size_t n = cache.batch();
  const std::size_t C = spec.classes;
  const std::size_t F = cache.layout.total;
  if (targets.shape() != Shape{n, C}) {
    throw ShapeError("targets " + shape_string(targets.shape()) + " do not match batch x classes");
  }
  const std::size_t L = cache.shapes.size();
  const std::size_t r = spec.pairs();

  BackwardResult<T> res;
  auto& sens = res.sens;
  sens.output = Tensor<T>({n, C});
  for (std::size_t i = 0; i < n * C; ++i) sens.output[i] = cache.probs[i] - targets[i];

  sens.fcl = Tensor<T>({n, F});
  res.grads = Parameters<T>::zeros(spec, si);
  {
    using Map = Eigen::Map<detail::RowMatrix<T>>;
    using CMap = Eigen::Map<const detail::RowMatrix<T>>;
    const auto N = static_cast<Eigen::Index>(n);
    const auto CC = static_cast<Eigen::Index>(C);
    const auto FF = static_cast<Eigen::Index>(F);
    CMap delta(sens.output.data(), N, CC);
    CMap fcl(cache.fcl.data(), N, FF);
    CMap w(params.out_weight.data(), CC, FF);
    if constexpr (detail::kFixedOrder<T>) {
      detail::gemm_fixed(n, F, C, sens.output.data(), C, 1, params.out_weight.data(), F, 1, sens.fcl.data(), false);
      detail::gemm_fixed(C, F, n, sens.output.data(), 1, C, cache.fcl.data(), F, 1, res.grads.out_weight.data(),
                         false);
    } else {
      Map(sens.fcl.data(), N, FF).noalias() = delta * w;
      Map(res.grads.out_weight.data(), CC, FF).noalias() = delta.transpose() * fcl;
    }
    for (std::size_t l = 0; l < n; ++l) {
      for (std::size_t c = 0; c < C; ++c) res.grads.out_bias[c] += sens.output(l, c);
    }
  }

  sens.layers.resize(L);
  sens.fc_slices.resize(L);
  for (std::size_t k = 0; k < L; ++k) {
    const auto& s = cache.shapes[k];
    sens.layers[k] = Tensor<T>({n, s.channels, s.height, s.width});
    if (cache.layout.length[k] > 0) sens.fc_slices[k] = Tensor<T>({n, cache.layout.length[k]});
  }

  const std::size_t workers = detail::worker_count(n, exec.threads);
  std::vector<Parameters<T>> partial;
  if (workers > 1) {
    for (std::size_t w = 0; w < workers; ++w) partial.push_back(Parameters<T>::zeros(spec, si));
  }
  std::mutex merge_mutex;

  detail::parallel_chunks(n, exec.threads, [&](std::size_t begin, std::size_t end, std::size_t worker) {
    Parameters<T>& acc = workers == 1 ? res.grads : partial[worker];
    std::vector<T> cols, dcols, pre_pool;
    for (std::size_t l = begin; l < end; ++l) {
      const auto dfcl = sens.fcl.slice(l);
      for (std::size_t k = 0; k < L; ++k) {
        if (cache.layout.length[k] == 0) continue;
        const auto src = dfcl.subspan(cache.layout.offset[k], cache.layout.length[k]);
        std::copy(src.begin(), src.end(), sens.fc_slices[k].slice(l).begin());
      }
      for (std::size_t st = r; st-- > 0;) {
        const auto& stage = spec.stages[st];
        const std::size_t pool_k = 2 * st + 1;  // 0-based index of h_{2k}
        const std::size_t conv_k = 2 * st;      // 0-based index of h_{2k-1}
        const MapShape& ps = cache.shapes[pool_k];
        const MapShape& cs = cache.shapes[conv_k];

        // d_{2k}: the conv-input contribution from the stage above was
        // accumulated into this buffer by the previous iteration.
        auto d_pool = sens.layers[pool_k].slice(l);
        if (cache.layout.length[pool_k] > 0) {
          const auto fc = sens.fc_slices[pool_k].slice(l);
          for (std::size_t i = 0; i < d_pool.size(); ++i) d_pool[i] += fc[i];
        }

        const T* d_pooled = d_pool.data();
        if (stage.pool.lrn) {
          pre_pool.assign(ps.size(), T{0});
          detail::lrn_backward_sample(cache.layers[pool_k].pre.slice(l).data(),
                                      cache.layers[pool_k].act.slice(l).data(),
                                      cache.layers[pool_k].lrn_scale.slice(l).data(), d_pool.data(),
                                      ps.channels, ps.plane(), *stage.pool.lrn, pre_pool.data());
          d_pooled = pre_pool.data();
        }

        auto d_conv = sens.layers[conv_k].slice(l);
        const std::uint32_t* route = cache.layers[pool_k].route.data() + l * ps.size();
        for (std::size_t c = 0; c < cs.channels; ++c) {
          detail::pool_plane_backward(d_pooled + c * ps.plane(), route + c * ps.plane(), cs.height,
                                      cs.width, stage.pool.params, ps.height, ps.width,
                                      d_conv.data() + c * cs.plane());
        }
        if (cache.layout.length[conv_k] > 0) {
          const auto fc = sens.fc_slices[conv_k].slice(l);
          for (std::size_t i = 0; i < d_conv.size(); ++i) d_conv[i] += fc[i];
        }
        const auto h = cache.layers[conv_k].act.slice(l);
        for (std::size_t i = 0; i < d_conv.size(); ++i) {
          d_conv[i] *= activation_deriv_from_output(h[i], stage.conv.activation);
        }

        const bool first = st == 0;
        const MapShape in_shape = first ? spec.input : cache.shapes[conv_k - 1];
        const T* in = first ? cache.input.slice(l).data() : cache.layers[conv_k - 1].act.slice(l).data();
        T* grad_in = first ? nullptr : sens.layers[conv_k - 1].slice(l).data();
        detail::conv_backward_sample(in, params.conv[st].weight.data(), d_conv.data(),
                                     detail::conv_geometry(stage.conv, in_shape, cs),
                                     acc.conv[st].weight.data(), acc.conv[st].bias.data(), grad_in,
                                     cols, dcols);
      }
    }
    if (workers > 1 && !exec.deterministic) {
      std::lock_guard lock(merge_mutex);
      add_into(res.grads, acc);
    }
  });
  if (workers > 1 && exec.deterministic) {
    for (const auto& p : partial) add_into(res.grads, p);
  }
  scale_into(res.grads, T{1} / static_cast<T>(n));
  return res;
}

// Gradient checking -------------------------------------------------------------

struct GradCheckOptions {
  std::size_t batch = 2;
  // Inputs are redrawn while any relu pre-activation or max-pool runner-up
  // lies within this distance of a kink.
  double kink_margin = 1e-4;
  std::size_t max_reseeds = 200;
  double weight_scale = 1.0;  // multiplies sqrt(3/fan_in) for the random weights
  double bias_scale = 0.1;
  // When set, checked instead of randomly drawn parameters.
  const Parameters<double>* params = nullptr;
  // Fault-injection hook applied to the analytic gradients before comparison.
  std::function<void(Gradients<double>&)> corrupt;
};

struct GroupError {
  std::string name;
  std::size_t count = 0;
  double max_rel = 0;
  double mean_rel = 0;
  std::size_t both_zero = 0;  // entries where analytic and numeric are exactly 0

  bool dead() const { return count > 0 && both_zero == count; }
};

struct GradCheckReport {
  std::vector<GroupError> groups;
  double max_rel = 0;
  double mean_rel = 0;
  std::size_t checked = 0;
  std::size_t reseeds = 0;
  bool kinks_unresolved = false;

  bool dead_region() const {
    return std::any_of(groups.begin(), groups.end(), [](const GroupError& g) { return g.dead(); });
  }
  bool passed(double threshold) const { return max_rel <= threshold; }
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

namespace detail {

// Distance of the cached forward pass from the nearest non-differentiable
// point: relu pre-activations near 0 and max-pool windows with a near-tie.
inline double kink_distance(const NetworkSpec& spec, const ForwardCache<double>& cache) {
  double dist = std::numeric_limits<double>::infinity();
  const std::size_t n = cache.batch();
  for (std::size_t st = 0; st < spec.pairs(); ++st) {
    const auto& stage = spec.stages[st];
    const auto& conv = cache.layers[2 * st];
    if (stage.conv.activation == Activation::relu) {
      for (double u : conv.pre.values()) dist = std::min(dist, std::abs(u));
    }
    const auto& pp = stage.pool.params;
    if (pp.mode != PoolMode::max) continue;
    const auto& cs = cache.shapes[2 * st];
    const auto& ps = cache.shapes[2 * st + 1];
    for (std::size_t l = 0; l < n; ++l) {
      for (std::size_t c = 0; c < cs.channels; ++c) {
        const double* plane = conv.act.slice(l).data() + c * cs.plane();
        for (std::size_t oi = 0; oi < ps.height; ++oi) {
          for (std::size_t oj = 0; oj < ps.width; ++oj) {
            double best = -std::numeric_limits<double>::infinity();
            double second = best;
            for (std::size_t r = oi * pp.stride; r < std::min(oi * pp.stride + pp.window, cs.height); ++r) {
              for (std::size_t q = oj * pp.stride; q < std::min(oj * pp.stride + pp.window, cs.width); ++q) {
                const double v = plane[r * cs.width + q];
                if (v > best) {
                  second = best;
                  best = v;
                } else if (v > second) {
                  second = v;
                }
              }
            }
            // Ties among dead relu outputs are harmless: both sides stay at 0.
            if (std::isfinite(second) && best > 0) dist = std::min(dist, best - second);
          }
        }
      }
    }
  }
  return dist;
}

}  // namespace detail

// Random parameters with fan-in scaled uniform weights and small biases.
inline Parameters<double> random_parameters(const NetworkSpec& spec, const ShortcutIndicator& si,
                                            std::uint64_t seed, double weight_scale = 1.0,
                                            double bias_scale = 0.1) {
  auto p = Parameters<double>::zeros(spec, si);
  std::mt19937_64 rng(seed);
  for (auto& a : named_arrays(p)) {
    const auto& shape = a.tensor->shape();
    double bound = bias_scale;
    if (!a.is_bias) {
      const std::size_t fan_in = shape_product(shape) / shape[0];
      bound = weight_scale * std::sqrt(3.0 / static_cast<double>(fan_in));
    }
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : a.tensor->values()) v = dist(rng);
  }
  return p;
}

// Compares analytic gradients with (L(t+eps) - L(t-eps)) / (2 eps) for every
// scalar parameter on a random batch. Never mutates the caller's parameters.
inline GradCheckReport grad_check(const NetworkSpec& spec, const ShortcutIndicator& si,
                                  std::uint64_t seed, double epsilon,
                                  const GradCheckOptions& opts = {}) {
  validate_spec(spec, si);
  Parameters<double> params = opts.params ? *opts.params
                                          : random_parameters(spec, si, seed, opts.weight_scale,
                                                              opts.bias_scale);
  check_params(spec, si, params);

  const std::size_t n = opts.batch;
  const auto& in = spec.input;
  Tensor<double> x({n, in.channels, in.height, in.width});
  Tensor<double> y({n, spec.classes});
  GradCheckReport report;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t attempt = 0;; ++attempt) {
    std::uniform_real_distribution<double> pix(-1.0, 1.0);
    std::uniform_int_distribution<std::size_t> cls(0, spec.classes - 1);
    for (auto& v : x.values()) v = pix(rng);
    y.fill(0.0);
    for (std::size_t l = 0; l < n; ++l) y(l, cls(rng)) = 1.0;
    const auto probe = forward(spec, params, si, x);
    if (detail::kink_distance(spec, probe) >= opts.kink_margin) break;
    if (attempt + 1 >= opts.max_reseeds) {
      report.kinks_unresolved = true;
      break;
    }
    ++report.reseeds;
  }

  const auto cache = forward(spec, params, si, x);
  auto analytic = backward(spec, params, si, cache, y).grads;
  if (opts.corrupt) opts.corrupt(analytic);

  auto loss_at = [&](const Parameters<double>& p) {
    return mean_cross_entropy(forward(spec, p, si, x).probs, y);
  };

  auto param_arrays = named_arrays(params);
  auto grad_arrays = named_arrays(analytic);
  double total = 0;
  for (std::size_t a = 0; a < param_arrays.size(); ++a) {
    GroupError g{param_arrays[a].name, param_arrays[a].tensor->size(), 0, 0, 0};
    auto values = param_arrays[a].tensor->values();
    const auto grads = grad_arrays[a].tensor->values();
    double sum = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + epsilon;
      const double plus = loss_at(params);
      values[i] = saved - epsilon;
      const double minus = loss_at(params);
      values[i] = saved;
      const double numeric = (plus - minus) / (2 * epsilon);
      if (numeric == 0.0 && grads[i] == 0.0) ++g.both_zero;
      const double rel = relative_error(grads[i], numeric);
      g.max_rel = std::max(g.max_rel, rel);
      sum += rel;
    }
    g.mean_rel = sum / static_cast<double>(g.count);
    report.max_rel = std::max(report.max_rel, g.max_rel);
    report.checked += g.count;
    total += sum;
    report.groups.push_back(g);
  }
  report.mean_rel = report.checked ? total / static_cast<double>(report.checked) : 0.0;
  return report;
}

}  // namespace scnn
