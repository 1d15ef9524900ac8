#pragma once

// Multi-channel convolution kernels used by the batched forward and backward
// passes. A layer is lowered to one matrix product per sample:
//   u (out x P) = W (out x K) * cols (K x P),  K = in*kh*kw, P = out_h*out_w
// where `cols` is the im2col unfolding of the zero-padded input. The results
// agree with summing xcorr_valid over input channels.
//
// float goes through Eigen. double is the verification precision and uses
// plain loops with a fixed summation order (index order, bias added last), so
// its results do not depend on how a BLAS blocks the product.

#include <Eigen/Core>
#include <cstddef>
#include <type_traits>
#include <vector>

#include "scnn/tensor.hpp"

namespace scnn::detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  std::size_t in_channels = 0;
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  Padding pad;
  std::size_t out_h = 0;
  std::size_t out_w = 0;

  std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
  std::size_t positions() const { return out_h * out_w; }
  std::size_t in_size() const { return in_channels * in_h * in_w; }
  std::size_t out_size() const { return out_channels * out_h * out_w; }
};

template <typename T>
inline constexpr bool kFixedOrder = std::is_same_v<T, double>;

// C (m x n, row-major) = or += A * B with strided operands; each entry is
// accumulated over t = 0..k-1 in order.
template <typename T>
void gemm_fixed(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_rs, std::size_t a_cs,
                const T* b, std::size_t b_rs, std::size_t b_cs, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T{0};
      for (std::size_t t = 0; t < k; ++t) s += a[i * a_rs + t * a_cs] * b[t * b_rs + j * b_cs];
      c[i * n + j] = s;
    }
  }
}

template <typename T>
void im2col(const T* in, const ConvGeometry& g, T* cols) {
  const std::size_t P = g.positions();
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const T* plane = in + c * g.in_h * g.in_w;
    for (std::size_t u = 0; u < g.kernel_h; ++u) {
      for (std::size_t v = 0; v < g.kernel_w; ++v) {
        T* row = cols + ((c * g.kernel_h + u) * g.kernel_w + v) * P;
        for (std::size_t i = 0; i < g.out_h; ++i) {
          const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * g.stride + u) -
                                   static_cast<std::ptrdiff_t>(g.pad.top);
          T* dst = row + i * g.out_w;
          if (r < 0 || r >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(r) * g.in_w;
          for (std::size_t j = 0; j < g.out_w; ++j) {
            const std::ptrdiff_t c2 = static_cast<std::ptrdiff_t>(j * g.stride + v) -
                                      static_cast<std::ptrdiff_t>(g.pad.left);
            dst[j] = (c2 < 0 || c2 >= static_cast<std::ptrdiff_t>(g.in_w))
                         ? T{0}
                         : src[static_cast<std::size_t>(c2)];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds `cols` back into `grad_in`.
template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* grad_in) {
  const std::size_t P = g.positions();
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    T* plane = grad_in + c * g.in_h * g.in_w;
    for (std::size_t u = 0; u < g.kernel_h; ++u) {
      for (std::size_t v = 0; v < g.kernel_w; ++v) {
        const T* row = cols + ((c * g.kernel_h + u) * g.kernel_w + v) * P;
        for (std::size_t i = 0; i < g.out_h; ++i) {
          const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * g.stride + u) -
                                   static_cast<std::ptrdiff_t>(g.pad.top);
          if (r < 0 || r >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          T* dst = plane + static_cast<std::size_t>(r) * g.in_w;
          const T* src = row + i * g.out_w;
          for (std::size_t j = 0; j < g.out_w; ++j) {
            const std::ptrdiff_t c2 = static_cast<std::ptrdiff_t>(j * g.stride + v) -
                                      static_cast<std::ptrdiff_t>(g.pad.left);
            if (c2 < 0 || c2 >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            dst[static_cast<std::size_t>(c2)] += src[j];
          }
        }
      }
    }
  }
}

// u = W * im2col(in) + b for one sample. `cols` is caller-owned scratch.
template <typename T>
void conv_forward_sample(const T* in, const T* weight, const T* bias, const ConvGeometry& g,
                         T* out, std::vector<T>& cols) {
  const auto K = static_cast<Eigen::Index>(g.patch());
  const auto P = static_cast<Eigen::Index>(g.positions());
  const auto O = static_cast<Eigen::Index>(g.out_channels);
  cols.resize(g.patch() * g.positions());
  im2col(in, g, cols.data());
  if constexpr (kFixedOrder<T>) {
    const std::size_t k = g.patch(), p = g.positions();
    gemm_fixed(g.out_channels, p, k, weight, k, 1, cols.data(), p, 1, out, false);
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      for (std::size_t q = 0; q < p; ++q) out[o * p + q] += bias[o];
    }
    return;
  }
  Eigen::Map<const RowMatrix<T>> w(weight, O, K);
  Eigen::Map<const RowMatrix<T>> x(cols.data(), K, P);
  Eigen::Map<RowMatrix<T>> u(out, O, P);
  u.noalias() = w * x;
  for (Eigen::Index o = 0; o < O; ++o) u.row(o).array() += bias[o];
}

// Fixed-order backward: every accumulator receives its terms in (output
// channel, position) order, the input sensitivity by direct scatter.
template <typename T>
void conv_backward_fixed(const T* weight, const T* delta, const ConvGeometry& g, const T* cols, T* grad_weight,
                         T* grad_bias, T* grad_in) {
  const std::size_t K = g.patch(), P = g.positions();
  gemm_fixed(g.out_channels, K, P, delta, P, 1, cols, 1, P, grad_weight, true);
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    for (std::size_t q = 0; q < P; ++q) grad_bias[o] += delta[o * P + q];
  }
  if (grad_in == nullptr) return;
  const std::size_t kk = g.kernel_h * g.kernel_w;
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    for (std::size_t i = 0; i < g.out_h; ++i) {
      for (std::size_t j = 0; j < g.out_w; ++j) {
        const T d = delta[o * P + i * g.out_w + j];
        for (std::size_t c = 0; c < g.in_channels; ++c) {
          for (std::size_t u = 0; u < g.kernel_h; ++u) {
            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * g.stride + u) -
                                     static_cast<std::ptrdiff_t>(g.pad.top);
            if (r < 0 || r >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            for (std::size_t v = 0; v < g.kernel_w; ++v) {
              const std::ptrdiff_t c2 = static_cast<std::ptrdiff_t>(j * g.stride + v) -
                                        static_cast<std::ptrdiff_t>(g.pad.left);
              if (c2 < 0 || c2 >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
              grad_in[(c * g.in_h + static_cast<std::size_t>(r)) * g.in_w + static_cast<std::size_t>(c2)] +=
                  d * weight[(o * g.in_channels + c) * kk + u * g.kernel_w + v];
            }
          }
        }
      }
    }
  }
}

// Accumulates dW += delta * cols^T and db += rowsum(delta); when `grad_in` is
// non-null also accumulates the input sensitivity col2im(W^T * delta).
template <typename T>
void conv_backward_sample(const T* in, const T* weight, const T* delta, const ConvGeometry& g,
                          T* grad_weight, T* grad_bias, T* grad_in, std::vector<T>& cols,
                          std::vector<T>& dcols) {
  const auto K = static_cast<Eigen::Index>(g.patch());
  const auto P = static_cast<Eigen::Index>(g.positions());
  const auto O = static_cast<Eigen::Index>(g.out_channels);
  cols.resize(g.patch() * g.positions());
  im2col(in, g, cols.data());
  if constexpr (kFixedOrder<T>) {
    conv_backward_fixed(weight, delta, g, cols.data(), grad_weight, grad_bias, grad_in);
    return;
  }
  Eigen::Map<const RowMatrix<T>> d(delta, O, P);
  Eigen::Map<const RowMatrix<T>> x(cols.data(), K, P);
  Eigen::Map<RowMatrix<T>> dw(grad_weight, O, K);
  dw.noalias() += d * x.transpose();
  // Plain loop: Eigen's vectorized sum depends on the buffer's alignment,
  // which would make repeated runs differ in the last bit.
  for (Eigen::Index o = 0; o < O; ++o) {
    T s{0};
    for (Eigen::Index q = 0; q < P; ++q) s += d(o, q);
    grad_bias[o] += s;
  }
  if (grad_in != nullptr) {
    dcols.resize(g.patch() * g.positions());
    Eigen::Map<const RowMatrix<T>> w(weight, O, K);
    Eigen::Map<RowMatrix<T>> dx(dcols.data(), K, P);
    dx.noalias() = w.transpose() * d;
    col2im_add(dcols.data(), g, grad_in);
  }
}

}  // namespace scnn::detail
