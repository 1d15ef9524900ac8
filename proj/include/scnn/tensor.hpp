#pragma once

// Dense tensors and the 2-D primitives (correlation, full convolution,
// rotation, pooling and its adjoint) that the layer math is built from.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace scnn {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// Row-major n-dimensional array. The last index varies fastest.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    check_dims();
    data_.assign(shape_product(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (shape_product(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  // Builds a 2-D tensor from nested rows, e.g. Tensor<double>::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * shape_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const noexcept {
    return data_[i * shape_[1] + j];
  }
  T& operator()(std::size_t c, std::size_t i, std::size_t j) noexcept {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  const T& operator()(std::size_t c, std::size_t i, std::size_t j) const noexcept {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }

  // Element count of one slice along axis 0.
  std::size_t stride0() const noexcept { return shape_.empty() ? 0 : data_.size() / shape_[0]; }
  std::span<T> slice(std::size_t i) noexcept { return {data_.data() + i * stride0(), stride0()}; }
  std::span<const T> slice(std::size_t i) const noexcept {
    return {data_.data() + i * stride0(), stride0()};
  }

  Tensor reshaped(Shape shape) const {
    if (shape_product(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

struct Padding {
  std::size_t top = 0;
  std::size_t bottom = 0;
  std::size_t left = 0;
  std::size_t right = 0;

  static Padding uniform(std::size_t p) { return {p, p, p, p}; }
  friend bool operator==(const Padding&, const Padding&) = default;
};

enum class PoolMode { max, avg };

struct PoolParams {
  std::size_t window = 2;
  std::size_t stride = 2;
  PoolMode mode = PoolMode::max;
  bool ceil_mode = false;
};

// Output length of a correlation along one axis. Zero means the kernel does
// not fit.
inline std::size_t conv_out_dim(std::size_t dim, std::size_t pad_lo, std::size_t pad_hi,
                                std::size_t kernel, std::size_t stride) {
  const std::size_t padded = dim + pad_lo + pad_hi;
  if (stride == 0 || kernel == 0 || kernel > padded) return 0;
  return (padded - kernel) / stride + 1;
}

// Output length of a pooling along one axis. Zero means invalid. In ceil
// mode the last window may be truncated; a window that would start past the
// input is dropped.
inline std::size_t pool_out_dim(std::size_t dim, std::size_t window, std::size_t stride,
                                bool ceil_mode) {
  if (dim == 0 || window == 0 || stride == 0) return 0;
  if (!ceil_mode) {
    if (window > dim) return 0;
    return (dim - window) / stride + 1;
  }
  if (window >= dim) return 1;
  std::size_t out = (dim - window + stride - 1) / stride + 1;
  while (out > 1 && (out - 1) * stride >= dim) --out;
  return out;
}

// Where each pooled cell came from. For max pooling `argmax` holds the
// row-major index (row * in_cols + col) of the selected input element; for
// average pooling `area` holds the count of in-bounds cells in each window.
struct PoolingRouteMap {
  std::size_t in_rows = 0;
  std::size_t in_cols = 0;
  std::size_t out_rows = 0;
  std::size_t out_cols = 0;
  PoolMode mode = PoolMode::max;
  std::vector<std::uint32_t> argmax;
  std::vector<std::uint32_t> area;

  std::pair<std::size_t, std::size_t> coord(std::size_t i, std::size_t j) const {
    const std::size_t flat = argmax.at(i * out_cols + j);
    return {flat / in_cols, flat % in_cols};
  }
  Shape shape() const { return {out_rows, out_cols}; }
};

namespace detail {

inline void require_matrix(const Shape& s, const char* what) {
  if (s.size() != 2) {
    throw ShapeError(std::string(what) + " must be 2-D, got " + shape_string(s));
  }
}

// Raw-plane pooling kernels shared by the 2-D API and the batched network code.
// `route` receives one entry per output cell (argmax index or window area).
template <typename T>
void pool_plane_forward(const T* in, std::size_t rows, std::size_t cols, const PoolParams& p,
                        std::size_t out_rows, std::size_t out_cols, T* out,
                        std::uint32_t* route) {
  for (std::size_t oi = 0; oi < out_rows; ++oi) {
    const std::size_t r0 = oi * p.stride;
    const std::size_t r1 = std::min(r0 + p.window, rows);
    for (std::size_t oj = 0; oj < out_cols; ++oj) {
      const std::size_t c0 = oj * p.stride;
      const std::size_t c1 = std::min(c0 + p.window, cols);
      if (p.mode == PoolMode::max) {
        std::size_t best = r0 * cols + c0;
        T best_val = in[best];
        for (std::size_t r = r0; r < r1; ++r) {
          for (std::size_t c = c0; c < c1; ++c) {
            if (in[r * cols + c] > best_val) {
              best_val = in[r * cols + c];
              best = r * cols + c;
            }
          }
        }
        out[oi * out_cols + oj] = best_val;
        route[oi * out_cols + oj] = static_cast<std::uint32_t>(best);
      } else {
        T sum = T{0};
        for (std::size_t r = r0; r < r1; ++r) {
          for (std::size_t c = c0; c < c1; ++c) sum += in[r * cols + c];
        }
        const std::size_t area = (r1 - r0) * (c1 - c0);
        out[oi * out_cols + oj] = sum / static_cast<T>(area);
        route[oi * out_cols + oj] = static_cast<std::uint32_t>(area);
      }
    }
  }
}

// Accumulates the pooling adjoint of `delta` into `grad_in` (not cleared).
template <typename T>
void pool_plane_backward(const T* delta, const std::uint32_t* route, std::size_t rows,
                         std::size_t cols, const PoolParams& p, std::size_t out_rows,
                         std::size_t out_cols, T* grad_in) {
  for (std::size_t oi = 0; oi < out_rows; ++oi) {
    for (std::size_t oj = 0; oj < out_cols; ++oj) {
      const T d = delta[oi * out_cols + oj];
      const std::uint32_t rt = route[oi * out_cols + oj];
      if (p.mode == PoolMode::max) {
        grad_in[rt] += d;
      } else {
        const T share = d / static_cast<T>(rt);
        const std::size_t r0 = oi * p.stride;
        const std::size_t r1 = std::min(r0 + p.window, rows);
        const std::size_t c0 = oj * p.stride;
        const std::size_t c1 = std::min(c0 + p.window, cols);
        for (std::size_t r = r0; r < r1; ++r) {
          for (std::size_t c = c0; c < c1; ++c) grad_in[r * cols + c] += share;
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> rot180(const Tensor<T>& m) {
  detail::require_matrix(m.shape(), "rot180 input");
  Tensor<T> out(m.shape());
  const std::size_t n = m.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = m[n - 1 - i];
  return out;
}

// Valid-mode cross-correlation of `x` (zero-padded) with `k`, without kernel
// flipping.
template <typename T>
Tensor<T> xcorr_valid(const Tensor<T>& x, const Tensor<T>& k, Padding pad = {},
                      std::size_t stride = 1) {
  detail::require_matrix(x.shape(), "xcorr input");
  detail::require_matrix(k.shape(), "xcorr kernel");
  if (stride == 0) throw ShapeError("xcorr stride must be positive");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const std::size_t kr = k.dim(0), kc = k.dim(1);
  const std::size_t out_r = conv_out_dim(rows, pad.top, pad.bottom, kr, stride);
  const std::size_t out_c = conv_out_dim(cols, pad.left, pad.right, kc, stride);
  if (out_r == 0 || out_c == 0) {
    throw ShapeError("kernel " + shape_string(k.shape()) + " larger than padded input " +
                     shape_string(x.shape()));
  }
  Tensor<T> out({out_r, out_c});
  for (std::size_t i = 0; i < out_r; ++i) {
    for (std::size_t j = 0; j < out_c; ++j) {
      T acc = T{0};
      for (std::size_t u = 0; u < kr; ++u) {
        const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * stride + u) -
                                 static_cast<std::ptrdiff_t>(pad.top);
        if (r < 0 || r >= static_cast<std::ptrdiff_t>(rows)) continue;
        for (std::size_t v = 0; v < kc; ++v) {
          const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(j * stride + v) -
                                   static_cast<std::ptrdiff_t>(pad.left);
          if (c < 0 || c >= static_cast<std::ptrdiff_t>(cols)) continue;
          acc += x(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) * k(u, v);
        }
      }
      out(i, j) = acc;
    }
  }
  return out;
}

// Full-mode correlation of `delta` with rot180(k): the gradient of a
// stride-1, unpadded xcorr_valid with respect to its input.
template <typename T>
Tensor<T> backprop_input(const Tensor<T>& delta, const Tensor<T>& k) {
  detail::require_matrix(delta.shape(), "backprop delta");
  detail::require_matrix(k.shape(), "backprop kernel");
  const std::size_t kr = k.dim(0), kc = k.dim(1);
  return xcorr_valid(delta, rot180(k), Padding{kr - 1, kr - 1, kc - 1, kc - 1}, 1);
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("hadamard shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
struct PoolResult {
  Tensor<T> output;
  PoolingRouteMap route;
};

template <typename T>
PoolResult<T> pool_forward(const Tensor<T>& m, const PoolParams& p) {
  detail::require_matrix(m.shape(), "pool input");
  if (p.window == 0 || p.stride == 0) throw ShapeError("pool window and stride must be positive");
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  const std::size_t out_r = pool_out_dim(rows, p.window, p.stride, p.ceil_mode);
  const std::size_t out_c = pool_out_dim(cols, p.window, p.stride, p.ceil_mode);
  if (out_r == 0 || out_c == 0) {
    throw ShapeError("pool window " + std::to_string(p.window) + " larger than input " +
                     shape_string(m.shape()));
  }
  PoolResult<T> res{Tensor<T>({out_r, out_c}), {}};
  res.route.in_rows = rows;
  res.route.in_cols = cols;
  res.route.out_rows = out_r;
  res.route.out_cols = out_c;
  res.route.mode = p.mode;
  auto& slot = p.mode == PoolMode::max ? res.route.argmax : res.route.area;
  slot.resize(out_r * out_c);
  detail::pool_plane_forward(m.data(), rows, cols, p, out_r, out_c, res.output.data(),
                             slot.data());
  return res;
}

template <typename T>
Tensor<T> pool_backward(const Tensor<T>& delta, const PoolingRouteMap& route,
                        const PoolParams& p) {
  detail::require_matrix(delta.shape(), "pool delta");
  if (delta.shape() != route.shape()) {
    throw ShapeError("pool delta " + shape_string(delta.shape()) + " does not match route " +
                     shape_string(route.shape()));
  }
  if (p.mode != route.mode) throw ShapeError("pool mode does not match route map");
  const auto& slot = p.mode == PoolMode::max ? route.argmax : route.area;
  if (slot.size() != delta.size()) throw ShapeError("route map is incomplete");
  Tensor<T> grad({route.in_rows, route.in_cols});
  detail::pool_plane_backward(delta.data(), slot.data(), route.in_rows, route.in_cols, p,
                              route.out_rows, route.out_cols, grad.data());
  return grad;
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("dot length mismatch");
  T acc = T{0};
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

}  // namespace scnn
