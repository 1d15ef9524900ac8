#pragma once

// Architecture description, shortcut indicator and forward pass of a
// shortcut CNN: r alternating convolution/pooling pairs whose selected layers
// are flattened and concatenated into the fully-connected layer (FCL), which
// feeds a softmax output layer directly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "scnn/conv.hpp"
#include "scnn/parallel.hpp"
#include "scnn/tensor.hpp"

namespace scnn {

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Activation { relu, sigmoid };

// Cross-channel local response normalization:
//   out_c = in_c / (k + alpha/local_size * sum_{c' in window(c)} in_c'^2)^beta
struct LrnConfig {
  std::size_t local_size = 5;
  double alpha = 1e-4;
  double beta = 0.75;
  double k = 1.0;

  friend bool operator==(const LrnConfig&, const LrnConfig&) = default;
};

struct ConvSpec {
  std::size_t out_channels = 1;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  Padding pad;
  Activation activation = Activation::relu;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

struct PoolSpec {
  PoolParams params;
  std::optional<LrnConfig> lrn;

  friend bool operator==(const PoolSpec& a, const PoolSpec& b) {
    return a.params.window == b.params.window && a.params.stride == b.params.stride &&
           a.params.mode == b.params.mode && a.params.ceil_mode == b.params.ceil_mode &&
           a.lrn == b.lrn;
  }
};

struct Stage {
  ConvSpec conv;
  PoolSpec pool;

  friend bool operator==(const Stage&, const Stage&) = default;
};

// Feature-map stack shape. Printed height x width x channels.
struct MapShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return channels * height * width; }
  std::size_t plane() const { return height * width; }
  std::string str() const {
    return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
  }
  friend bool operator==(const MapShape&, const MapShape&) = default;
};

struct NetworkSpec {
  MapShape input;
  std::vector<Stage> stages;
  std::size_t classes = 2;

  std::size_t pairs() const { return stages.size(); }
  std::size_t layers() const { return 2 * stages.size(); }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// Bits a_1 ... a_{2r-1}. Layer 2r (the last pooling layer) has no bit and is
// always part of the FCL.
class ShortcutIndicator {
 public:
  ShortcutIndicator() = default;
  explicit ShortcutIndicator(std::vector<bool> bits) : bits_(std::move(bits)) {}

  static ShortcutIndicator parse(std::string_view text) {
    if (text.empty()) throw SpecError("shortcut indicator is empty");
    std::vector<bool> bits;
    bits.reserve(text.size());
    for (char ch : text) {
      if (ch != '0' && ch != '1') {
        throw SpecError("shortcut indicator must contain only '0'/'1', got \"" +
                        std::string(text) + "\"");
      }
      bits.push_back(ch == '1');
    }
    return ShortcutIndicator(std::move(bits));
  }

  static ShortcutIndicator none(std::size_t pairs) {
    return ShortcutIndicator(std::vector<bool>(pairs == 0 ? 0 : 2 * pairs - 1, false));
  }

  // Canonical binary order: a_1 is the most significant bit.
  static ShortcutIndicator from_value(std::uint64_t value, std::size_t pairs) {
    const std::size_t n = 2 * pairs - 1;
    std::vector<bool> bits(n);
    for (std::size_t i = 0; i < n; ++i) bits[i] = ((value >> (n - 1 - i)) & 1U) != 0;
    return ShortcutIndicator(std::move(bits));
  }

  static std::vector<ShortcutIndicator> all(std::size_t pairs) {
    std::vector<ShortcutIndicator> out;
    const std::uint64_t count = std::uint64_t{1} << (2 * pairs - 1);
    for (std::uint64_t v = 0; v < count; ++v) out.push_back(from_value(v, pairs));
    return out;
  }

  std::size_t length() const { return bits_.size(); }
  bool bit(std::size_t i) const { return bits_.at(i); }

  // Whether 1-based layer `layer` feeds the FCL.
  bool selects(std::size_t layer) const {
    if (layer == bits_.size() + 1) return true;
    return layer >= 1 && layer <= bits_.size() && bits_[layer - 1];
  }

  std::uint64_t value() const {
    std::uint64_t v = 0;
    for (bool b : bits_) v = (v << 1) | (b ? 1U : 0U);
    return v;
  }

  bool is_standard() const { return std::none_of(bits_.begin(), bits_.end(), [](bool b) { return b; }); }

  std::string str() const {
    std::string s;
    for (bool b : bits_) s.push_back(b ? '1' : '0');
    return s;
  }

  friend bool operator==(const ShortcutIndicator&, const ShortcutIndicator&) = default;

 private:
  std::vector<bool> bits_;
};

// Layer output shapes h_1 ... h_2r, without the indicator check.
inline std::vector<MapShape> validate_spec(const NetworkSpec& spec) {
  if (spec.stages.empty()) throw SpecError("network needs at least one conv/pool pair");
  if (spec.classes < 2) throw SpecError("class count must be at least 2");
  if (spec.input.size() == 0) throw SpecError("input shape must be positive");
  std::vector<MapShape> shapes;
  MapShape cur = spec.input;
  for (std::size_t k = 0; k < spec.stages.size(); ++k) {
    const auto& st = spec.stages[k];
    const std::string tag = "layer " + std::to_string(2 * k + 1);
    if (st.conv.out_channels == 0) throw SpecError(tag + ": conv out_channels must be >= 1");
    if (st.conv.stride == 0) throw SpecError(tag + ": conv stride must be >= 1");
    if (st.conv.kernel_h == 0 || st.conv.kernel_w == 0) throw SpecError(tag + ": empty kernel");
    const std::size_t oh =
        conv_out_dim(cur.height, st.conv.pad.top, st.conv.pad.bottom, st.conv.kernel_h, st.conv.stride);
    const std::size_t ow =
        conv_out_dim(cur.width, st.conv.pad.left, st.conv.pad.right, st.conv.kernel_w, st.conv.stride);
    if (oh == 0 || ow == 0) {
      throw SpecError(tag + ": kernel " + std::to_string(st.conv.kernel_h) + "x" +
                      std::to_string(st.conv.kernel_w) + " does not fit input " + cur.str());
    }
    cur = {st.conv.out_channels, oh, ow};
    shapes.push_back(cur);

    const std::string ptag = "layer " + std::to_string(2 * k + 2);
    const auto& pp = st.pool.params;
    if (pp.window == 0 || pp.stride == 0) throw SpecError(ptag + ": pool window/stride must be >= 1");
    const std::size_t ph = pool_out_dim(cur.height, pp.window, pp.stride, pp.ceil_mode);
    const std::size_t pw = pool_out_dim(cur.width, pp.window, pp.stride, pp.ceil_mode);
    if (ph == 0 || pw == 0) {
      throw SpecError(ptag + ": pool window " + std::to_string(pp.window) +
                      " larger than input " + cur.str());
    }
    if (st.pool.lrn) {
      if (st.pool.lrn->local_size == 0 || st.pool.lrn->local_size % 2 == 0) {
        throw SpecError(ptag + ": LRN local_size must be odd");
      }
      if (!(st.pool.lrn->beta > 0)) throw SpecError(ptag + ": LRN beta must be positive");
    }
    cur = {cur.channels, ph, pw};
    shapes.push_back(cur);
  }
  return shapes;
}

inline void check_indicator(const NetworkSpec& spec, const ShortcutIndicator& si) {
  const std::size_t expected = 2 * spec.pairs() - 1;
  if (si.length() != expected) {
    throw SpecError("shortcut indicator \"" + si.str() + "\" has length " +
                    std::to_string(si.length()) + ", expected " + std::to_string(expected) +
                    " for r=" + std::to_string(spec.pairs()));
  }
}

inline std::vector<MapShape> validate_spec(const NetworkSpec& spec, const ShortcutIndicator& si) {
  if (spec.stages.empty()) throw SpecError("network needs at least one conv/pool pair");
  check_indicator(spec, si);
  return validate_spec(spec);
}

// Per-layer placement inside the FCL vector.
struct FclLayout {
  std::size_t total = 0;
  std::vector<std::size_t> offset;  // indexed by layer-1
  std::vector<std::size_t> length;  // 0 when the layer is not selected
};

inline FclLayout fcl_layout(const std::vector<MapShape>& shapes, const ShortcutIndicator& si) {
  FclLayout layout;
  layout.offset.resize(shapes.size());
  layout.length.resize(shapes.size());
  for (std::size_t k = 1; k <= shapes.size(); ++k) {
    layout.offset[k - 1] = layout.total;
    layout.length[k - 1] = si.selects(k) ? shapes[k - 1].size() : 0;
    layout.total += layout.length[k - 1];
  }
  return layout;
}

inline std::size_t fcl_size(const NetworkSpec& spec, const ShortcutIndicator& si) {
  return fcl_layout(validate_spec(spec, si), si).total;
}

template <typename T>
struct ConvParams {
  Tensor<T> weight;  // out x in x kh x kw
  Tensor<T> bias;    // out
};

template <typename T>
struct Parameters {
  std::vector<ConvParams<T>> conv;
  Tensor<T> out_weight;  // classes x fcl_size
  Tensor<T> out_bias;    // classes

  static Parameters zeros(const NetworkSpec& spec, const ShortcutIndicator& si) {
    const auto shapes = validate_spec(spec, si);
    Parameters p;
    std::size_t in_ch = spec.input.channels;
    for (const auto& st : spec.stages) {
      p.conv.push_back({Tensor<T>({st.conv.out_channels, in_ch, st.conv.kernel_h, st.conv.kernel_w}),
                        Tensor<T>({st.conv.out_channels})});
      in_ch = st.conv.out_channels;
    }
    p.out_weight = Tensor<T>({spec.classes, fcl_layout(shapes, si).total});
    p.out_bias = Tensor<T>({spec.classes});
    return p;
  }

  template <typename U>
  Parameters<U> cast() const {
    Parameters<U> p;
    for (const auto& c : conv) p.conv.push_back({c.weight.template cast<U>(), c.bias.template cast<U>()});
    p.out_weight = out_weight.template cast<U>();
    p.out_bias = out_bias.template cast<U>();
    return p;
  }

  friend bool operator==(const Parameters& a, const Parameters& b) {
    if (a.conv.size() != b.conv.size()) return false;
    for (std::size_t i = 0; i < a.conv.size(); ++i) {
      if (!(a.conv[i].weight == b.conv[i].weight) || !(a.conv[i].bias == b.conv[i].bias)) return false;
    }
    return a.out_weight == b.out_weight && a.out_bias == b.out_bias;
  }
};

// Derivatives of the loss, laid out exactly like Parameters.
template <typename T>
using Gradients = Parameters<T>;

template <typename TensorT>
struct NamedArray {
  std::string name;
  TensorT* tensor;
  bool is_bias;
};

// Stable enumeration of parameter arrays: conv1.weight, conv1.bias, ...,
// output.weight, output.bias.
template <typename P>
auto named_arrays(P& params) {
  using TensorT = std::remove_reference_t<decltype((params.out_weight))>;
  std::vector<NamedArray<TensorT>> out;
  for (std::size_t k = 0; k < params.conv.size(); ++k) {
    const std::string base = "conv" + std::to_string(k + 1);
    out.push_back({base + ".weight", &params.conv[k].weight, false});
    out.push_back({base + ".bias", &params.conv[k].bias, true});
  }
  out.push_back({"output.weight", &params.out_weight, false});
  out.push_back({"output.bias", &params.out_bias, true});
  return out;
}

template <typename T>
std::size_t parameter_count(const Parameters<T>& p) {
  std::size_t n = 0;
  for (const auto& a : named_arrays(p)) n += a.tensor->size();
  return n;
}

template <typename T>
void check_params(const NetworkSpec& spec, const ShortcutIndicator& si, const Parameters<T>& p) {
  const auto expected = Parameters<T>::zeros(spec, si);
  auto want = named_arrays(expected);
  auto got = named_arrays(p);
  if (want.size() != got.size()) throw ShapeError("parameter set does not match network depth");
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].tensor->shape() != got[i].tensor->shape()) {
      throw ShapeError(want[i].name + " has shape " + shape_string(got[i].tensor->shape()) +
                       ", expected " + shape_string(want[i].tensor->shape()));
    }
  }
}

// Activations -------------------------------------------------------------

template <typename T>
T activate(T u, Activation kind) {
  if (kind == Activation::relu) return u > T{0} ? u : T{0};
  return T{1} / (T{1} + std::exp(-u));
}

// Derivative expressed through the activation value h = f(u).
template <typename T>
T activation_deriv_from_output(T h, Activation kind) {
  if (kind == Activation::relu) return h > T{0} ? T{1} : T{0};
  return h * (T{1} - h);
}

template <typename T>
Tensor<T> activation(const Tensor<T>& u, Activation kind) {
  Tensor<T> out(u.shape());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = activate(u[i], kind);
  return out;
}

// relu'(0) is taken as 0.
template <typename T>
Tensor<T> activation_deriv(const Tensor<T>& u, Activation kind) {
  Tensor<T> out(u.shape());
  for (std::size_t i = 0; i < u.size(); ++i) {
    out[i] = activation_deriv_from_output(activate(u[i], kind), kind);
  }
  return out;
}

// LRN ------------------------------------------------------------------------

namespace detail {

template <typename T>
void lrn_forward_sample(const T* in, std::size_t channels, std::size_t plane, const LrnConfig& cfg,
                        T* out, T* scale) {
  const std::size_t half = (cfg.local_size - 1) / 2;
  const T coef = static_cast<T>(cfg.alpha / static_cast<double>(cfg.local_size));
  const T k = static_cast<T>(cfg.k);
  const T beta = static_cast<T>(cfg.beta);
  for (std::size_t c = 0; c < channels; ++c) {
    const std::size_t lo = c >= half ? c - half : 0;
    const std::size_t hi = std::min(channels - 1, c + half);
    for (std::size_t x = 0; x < plane; ++x) {
      T sq = T{0};
      for (std::size_t c2 = lo; c2 <= hi; ++c2) sq += in[c2 * plane + x] * in[c2 * plane + x];
      const T s = k + coef * sq;
      scale[c * plane + x] = s;
      out[c * plane + x] = in[c * plane + x] * std::pow(s, -beta);
    }
  }
}

template <typename T>
void lrn_backward_sample(const T* in, const T* out, const T* scale, const T* delta_out,
                         std::size_t channels, std::size_t plane, const LrnConfig& cfg,
                         T* delta_in) {
  const std::size_t half = (cfg.local_size - 1) / 2;
  const T factor = static_cast<T>(2.0 * cfg.alpha * cfg.beta / static_cast<double>(cfg.local_size));
  const T beta = static_cast<T>(cfg.beta);
  for (std::size_t c = 0; c < channels; ++c) {
    const std::size_t lo = c >= half ? c - half : 0;
    const std::size_t hi = std::min(channels - 1, c + half);
    for (std::size_t x = 0; x < plane; ++x) {
      T cross = T{0};
      for (std::size_t c2 = lo; c2 <= hi; ++c2) {
        const std::size_t j = c2 * plane + x;
        cross += delta_out[j] * out[j] / scale[j];
      }
      const std::size_t i = c * plane + x;
      delta_in[i] = delta_out[i] * std::pow(scale[i], -beta) - factor * in[i] * cross;
    }
  }
}

}  // namespace detail

template <typename T>
struct LrnResult {
  Tensor<T> output;
  Tensor<T> scale;  // k + alpha/n * windowed sum of squares
};

// `h` is channels x H x W.
template <typename T>
LrnResult<T> lrn_forward(const Tensor<T>& h, const LrnConfig& cfg) {
  if (h.rank() != 3) throw ShapeError("lrn input must be channels x H x W");
  LrnResult<T> r{Tensor<T>(h.shape()), Tensor<T>(h.shape())};
  detail::lrn_forward_sample(h.data(), h.dim(0), h.dim(1) * h.dim(2), cfg, r.output.data(),
                             r.scale.data());
  return r;
}

template <typename T>
Tensor<T> lrn_backward(const Tensor<T>& h, const LrnResult<T>& fwd, const Tensor<T>& delta_out,
                       const LrnConfig& cfg) {
  if (h.rank() != 3 || delta_out.shape() != h.shape() || fwd.output.shape() != h.shape()) {
    throw ShapeError("lrn backward shape mismatch");
  }
  Tensor<T> delta_in(h.shape());
  detail::lrn_backward_sample(h.data(), fwd.output.data(), fwd.scale.data(), delta_out.data(),
                              h.dim(0), h.dim(1) * h.dim(2), cfg, delta_in.data());
  return delta_in;
}

// Softmax ----------------------------------------------------------------------

template <typename T>
void softmax_into(std::span<const T> u, std::span<T> out) {
  const T m = *std::max_element(u.begin(), u.end());
  T sum = T{0};
  for (std::size_t i = 0; i < u.size(); ++i) {
    out[i] = std::exp(u[i] - m);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
}

template <typename T>
std::vector<T> softmax(std::span<const T> u) {
  if (u.empty()) throw ShapeError("softmax of empty vector");
  std::vector<T> out(u.size());
  softmax_into<T>(u, out);
  return out;
}

template <typename T>
std::vector<T> softmax(const std::vector<T>& u) {
  return softmax(std::span<const T>(u));
}

// Forward pass -------------------------------------------------------------------

template <typename T>
struct LayerState {
  Tensor<T> pre;  // conv: pre-activation u; pool with LRN: pooled values before LRN
  Tensor<T> act;  // h, batch x channels x H x W
  std::vector<std::uint32_t> route;  // pooling: one entry per pooled cell
  Tensor<T> lrn_scale;               // pooling with LRN
};

template <typename T>
struct ForwardCache {
  ShortcutIndicator si;
  std::vector<MapShape> shapes;     // h_1 ... h_2r
  FclLayout layout;
  Tensor<T> input;                    // the batch x that produced this cache
  std::vector<LayerState<T>> layers;  // layers[k-1] is h_k
  Tensor<T> fcl;     // batch x fcl_size
  Tensor<T> logits;  // batch x classes
  Tensor<T> probs;   // batch x classes

  std::size_t batch() const { return probs.empty() ? 0 : probs.dim(0); }
  const Tensor<T>& activation(std::size_t layer) const { return layers.at(layer - 1).act; }

  PoolingRouteMap route_map(const NetworkSpec& spec, std::size_t layer, std::size_t sample,
                            std::size_t channel) const {
    if (layer % 2 != 0) throw ShapeError("route maps exist only for pooling layers");
    const auto& in = shapes.at(layer - 2);
    const auto& out = shapes.at(layer - 1);
    const auto& pp = spec.stages.at(layer / 2 - 1).pool.params;
    PoolingRouteMap m{in.height, in.width, out.height, out.width, pp.mode, {}, {}};
    const auto* base = layers.at(layer - 1).route.data() + (sample * out.channels + channel) * out.plane();
    (pp.mode == PoolMode::max ? m.argmax : m.area).assign(base, base + out.plane());
    return m;
  }
};

namespace detail {

inline ConvGeometry conv_geometry(const ConvSpec& cs, const MapShape& in, const MapShape& out) {
  return {in.channels, in.height, in.width, cs.out_channels, cs.kernel_h, cs.kernel_w,
          cs.stride,   cs.pad,    out.height, out.width};
}

}  // namespace detail

template <typename T>
ForwardCache<T> forward(const NetworkSpec& spec, const Parameters<T>& params,
                        const ShortcutIndicator& si, const Tensor<T>& x_batch,
                        const ExecOptions& exec = {}) {
  ForwardCache<T> cache;
  cache.si = si;
  cache.shapes = validate_spec(spec, si);
  cache.layout = fcl_layout(cache.shapes, si);
  check_params(spec, si, params);
  const Shape want{x_batch.rank() ? x_batch.dim(0) : 0, spec.input.channels, spec.input.height,
                   spec.input.width};
  if (x_batch.shape() != want) {
    throw ShapeError("input batch " + shape_string(x_batch.shape()) + " does not match network input " +
                     spec.input.str());
  }
  const std::size_t n = x_batch.dim(0);
  const std::size_t L = cache.shapes.size();
  cache.input = x_batch;
  cache.layers.resize(L);
  for (std::size_t k = 0; k < L; ++k) {
    const auto& s = cache.shapes[k];
    Shape sh{n, s.channels, s.height, s.width};
    cache.layers[k].act = Tensor<T>(sh);
    const bool is_conv = k % 2 == 0;
    if (is_conv) {
      cache.layers[k].pre = Tensor<T>(sh);
    } else {
      cache.layers[k].route.resize(n * s.size());
      if (spec.stages[k / 2].pool.lrn) {
        cache.layers[k].pre = Tensor<T>(sh);
        cache.layers[k].lrn_scale = Tensor<T>(sh);
      }
    }
  }
  const std::size_t F = cache.layout.total;
  cache.fcl = Tensor<T>({n, F});

  detail::parallel_chunks(n, exec.threads, [&](std::size_t begin, std::size_t end, std::size_t) {
    std::vector<T> cols;
    for (std::size_t l = begin; l < end; ++l) {
      const T* in = x_batch.slice(l).data();
      MapShape in_shape = spec.input;
      for (std::size_t st = 0; st < spec.pairs(); ++st) {
        const auto& stage = spec.stages[st];
        auto& conv = cache.layers[2 * st];
        auto& pool = cache.layers[2 * st + 1];
        const MapShape& cs = cache.shapes[2 * st];
        const MapShape& ps = cache.shapes[2 * st + 1];
        const auto g = detail::conv_geometry(stage.conv, in_shape, cs);

        T* u = conv.pre.slice(l).data();
        T* h = conv.act.slice(l).data();
        detail::conv_forward_sample(in, params.conv[st].weight.data(), params.conv[st].bias.data(),
                                    g, u, cols);
        for (std::size_t i = 0; i < cs.size(); ++i) h[i] = activate(u[i], stage.conv.activation);

        const bool lrn = stage.pool.lrn.has_value();
        T* pooled = lrn ? pool.pre.slice(l).data() : pool.act.slice(l).data();
        std::uint32_t* route = pool.route.data() + l * ps.size();
        for (std::size_t c = 0; c < cs.channels; ++c) {
          detail::pool_plane_forward(h + c * cs.plane(), cs.height, cs.width, stage.pool.params,
                                     ps.height, ps.width, pooled + c * ps.plane(),
                                     route + c * ps.plane());
        }
        if (lrn) {
          detail::lrn_forward_sample(pooled, ps.channels, ps.plane(), *stage.pool.lrn,
                                     pool.act.slice(l).data(), pool.lrn_scale.slice(l).data());
        }
        in = pool.act.slice(l).data();
        in_shape = ps;
      }
      T* row = cache.fcl.slice(l).data();
      for (std::size_t k = 0; k < L; ++k) {
        if (cache.layout.length[k] == 0) continue;
        const auto src = cache.layers[k].act.slice(l);
        std::copy(src.begin(), src.end(), row + cache.layout.offset[k]);
      }
    }
  });

  const std::size_t C = spec.classes;
  cache.logits = Tensor<T>({n, C});
  cache.probs = Tensor<T>({n, C});
  if constexpr (detail::kFixedOrder<T>) {
    detail::gemm_fixed(n, C, F, cache.fcl.data(), F, 1, params.out_weight.data(), 1, F, cache.logits.data(), false);
  } else {
    Eigen::Map<const detail::RowMatrix<T>> fcl(cache.fcl.data(), static_cast<Eigen::Index>(n),
                                               static_cast<Eigen::Index>(F));
    Eigen::Map<const detail::RowMatrix<T>> w(params.out_weight.data(), static_cast<Eigen::Index>(C),
                                             static_cast<Eigen::Index>(F));
    Eigen::Map<detail::RowMatrix<T>> logits(cache.logits.data(), static_cast<Eigen::Index>(n),
                                            static_cast<Eigen::Index>(C));
    logits.noalias() = fcl * w.transpose();
  }
  for (std::size_t l = 0; l < n; ++l) {
    auto row = cache.logits.slice(l);
    for (std::size_t c = 0; c < C; ++c) row[c] += params.out_bias[c];
    softmax_into<T>(row, cache.probs.slice(l));
  }
  return cache;
}

// Index of the largest entry; ties go to the lower index.
template <typename T>
std::size_t argmax(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace scnn
