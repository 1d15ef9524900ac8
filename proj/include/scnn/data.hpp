#pragma once

// Datasets: MNIST (IDX), CIFAR-10 (binary batches) and seeded synthetic sets.
// Images are held as float; every loader produces values that are exact in
// single precision.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "scnn/network.hpp"
#include "scnn/tensor.hpp"

namespace scnn {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DataSource { mnist, cifar10, synthetic };

inline const char* to_string(DataSource s) {
  switch (s) {
    case DataSource::mnist: return "mnist";
    case DataSource::cifar10: return "cifar10";
    case DataSource::synthetic: return "synthetic";
  }
  return "?";
}

struct Dataset {
  Tensor<float> images;  // N x channels x H x W
  std::vector<int> labels;
  std::size_t classes = 0;
  DataSource source = DataSource::synthetic;
  float range_min = 0.0f;  // declared value range, inclusive
  float range_max = 1.0f;

  std::size_t size() const { return labels.size(); }
  MapShape image_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }

  void validate() const {
    if (images.rank() != 4) throw DataError("dataset images must be N x C x H x W");
    if (images.dim(0) != labels.size()) {
      throw DataError("dataset has " + std::to_string(images.dim(0)) + " images but " +
                      std::to_string(labels.size()) + " labels");
    }
    for (int l : labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= classes) {
        throw DataError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
      }
    }
    for (float v : images.values()) {
      if (!std::isfinite(v) || v < range_min || v > range_max) {
        throw DataError("pixel value outside declared range");
      }
    }
  }
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset) {
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;
inline constexpr float kPixelScale = 1.0f / 256.0f;

// Pixels are scaled by 1/256, so values lie in [0, 255/256].
inline Dataset load_mnist(const std::filesystem::path& images_path,
                          const std::filesystem::path& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  if (img.size() < 16) throw DataError("truncated IDX image header in " + images_path.string());
  if (lab.size() < 8) throw DataError("truncated IDX label header in " + labels_path.string());
  if (detail::read_be32(img, 0) != kIdxImageMagic) {
    throw DataError("bad IDX image magic " + std::to_string(detail::read_be32(img, 0)) + " in " +
                    images_path.string() + " (expected 2051)");
  }
  if (detail::read_be32(lab, 0) != kIdxLabelMagic) {
    throw DataError("bad IDX label magic " + std::to_string(detail::read_be32(lab, 0)) + " in " +
                    labels_path.string() + " (expected 2049)");
  }
  const std::size_t n = detail::read_be32(img, 4);
  const std::size_t rows = detail::read_be32(img, 8);
  const std::size_t cols = detail::read_be32(img, 12);
  const std::size_t n_labels = detail::read_be32(lab, 4);
  if (n != n_labels) {
    throw DataError("image/label count mismatch: " + std::to_string(n) + " images vs " +
                    std::to_string(n_labels) + " labels");
  }
  if (n == 0 || rows == 0 || cols == 0) throw DataError("empty IDX file " + images_path.string());
  if (img.size() < 16 + n * rows * cols) throw DataError("truncated IDX image data in " + images_path.string());
  if (lab.size() < 8 + n) throw DataError("truncated IDX label data in " + labels_path.string());

  Dataset ds;
  ds.source = DataSource::mnist;
  ds.classes = 10;
  ds.range_min = 0.0f;
  ds.range_max = 255.0f * kPixelScale;
  ds.images = Tensor<float>({n, 1, rows, cols});
  for (std::size_t i = 0; i < n * rows * cols; ++i) ds.images[i] = static_cast<float>(img[16 + i]) * kPixelScale;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    if (lab[8 + i] >= 10) throw DataError("MNIST label " + std::to_string(lab[8 + i]) + " out of range");
  }
  return ds;
}

inline constexpr std::size_t kCifarRecord = 3073;

// Concatenates CIFAR-10 binary batches; pixels scaled by 1/256 into [0, 1).
inline Dataset load_cifar10(const std::vector<std::filesystem::path>& batch_paths) {
  std::vector<std::uint8_t> all;
  for (const auto& p : batch_paths) {
    const auto buf = detail::read_file(p);
    if (buf.empty() || buf.size() % kCifarRecord != 0) {
      throw DataError(p.string() + ": size " + std::to_string(buf.size()) +
                      " is not a multiple of 3073-byte records");
    }
    all.insert(all.end(), buf.begin(), buf.end());
  }
  if (all.empty()) throw DataError("no CIFAR-10 batches given");
  const std::size_t n = all.size() / kCifarRecord;
  Dataset ds;
  ds.source = DataSource::cifar10;
  ds.classes = 10;
  ds.range_min = 0.0f;
  ds.range_max = 255.0f * kPixelScale;
  ds.images = Tensor<float>({n, 3, 32, 32});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = all.data() + i * kCifarRecord;
    if (rec[0] >= 10) throw DataError("CIFAR-10 label " + std::to_string(rec[0]) + " out of range in record " + std::to_string(i));
    ds.labels[i] = rec[0];
    auto dst = ds.images.slice(i);
    for (std::size_t j = 0; j < 3072; ++j) dst[j] = static_cast<float>(rec[1 + j]) * kPixelScale;
  }
  return ds;
}

inline std::vector<double> channel_means(const Dataset& ds) {
  const auto shape = ds.image_shape();
  std::vector<double> means(shape.channels, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto img = ds.images.slice(i);
    for (std::size_t c = 0; c < shape.channels; ++c) {
      for (std::size_t p = 0; p < shape.plane(); ++p) means[c] += img[c * shape.plane() + p];
    }
  }
  for (auto& m : means) m /= static_cast<double>(ds.size() * shape.plane());
  return means;
}

inline void subtract_channel_means(Dataset& ds, const std::vector<double>& means) {
  const auto shape = ds.image_shape();
  if (means.size() != shape.channels) throw DataError("channel mean count mismatch");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto img = ds.images.slice(i);
    for (std::size_t c = 0; c < shape.channels; ++c) {
      for (std::size_t p = 0; p < shape.plane(); ++p) {
        img[c * shape.plane() + p] -= static_cast<float>(means[c]);
      }
    }
  }
  ds.range_min -= 1.0f;
}

template <typename T = double>
std::vector<T> one_hot(int label, std::size_t classes) {
  if (label < 0 || static_cast<std::size_t>(label) >= classes) {
    throw std::out_of_range("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
  }
  std::vector<T> v(classes, T{0});
  v[static_cast<std::size_t>(label)] = T{1};
  return v;
}

template <typename T>
Tensor<T> one_hot_batch(std::span<const int> labels, std::size_t classes) {
  Tensor<T> y({labels.size(), classes});
  for (std::size_t l = 0; l < labels.size(); ++l) {
    const auto row = one_hot<T>(labels[l], classes);
    std::copy(row.begin(), row.end(), y.slice(l).begin());
  }
  return y;
}

template <typename T>
struct Batch {
  Tensor<T> images;
  std::vector<int> labels;
};

template <typename T>
Batch<T> make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  const auto s = ds.image_shape();
  Batch<T> b{Tensor<T>({indices.size(), s.channels, s.height, s.width}), {}};
  b.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = ds.images.slice(indices[i]);
    auto dst = b.images.slice(i);
    std::copy(src.begin(), src.end(), dst.begin());
    b.labels.push_back(ds.labels[indices[i]]);
  }
  return b;
}

template <typename T>
Batch<T> make_batch(const Dataset& ds, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return make_batch<T>(ds, idx);
}

// Synthetic data --------------------------------------------------------------

enum class SyntheticKind { separable, multiscale };

// Separable set: class 0 images have mean intensity <= threshold - margin/2,
// class 1 images >= threshold + margin/2.
inline constexpr float kSeparableThreshold = 0.5f;
inline constexpr float kSeparableMargin = 0.2f;

namespace detail {

inline void shift_mean(std::span<float> img, float target) {
  const double mean = std::accumulate(img.begin(), img.end(), 0.0) / static_cast<double>(img.size());
  const float delta = target - static_cast<float>(mean);
  for (auto& v : img) v += delta;
}

}  // namespace detail

// Multiscale set: class 1 iff the image carries both a fine 2x2 checkerboard
// texture (random phase) and a bright coarse quadrant (random quadrant).
// Class 0 is split evenly between texture-only, quadrant-only and neither.
// Every image is shifted to nearly the same mean intensity, so the global
// mean carries no class information.
inline Dataset make_synthetic(SyntheticKind kind, std::size_t n_samples, std::size_t image_size,
                              std::uint64_t seed) {
  if (n_samples < 2 || n_samples % 2 != 0) throw DataError("synthetic sample count must be even and >= 2");
  if (image_size < 4 || image_size % 2 != 0) throw DataError("synthetic image size must be even and >= 4");
  const std::size_t s = image_size;
  Dataset ds;
  ds.source = DataSource::synthetic;
  ds.classes = 2;
  ds.range_min = 0.0f;
  ds.range_max = 1.0f;
  ds.images = Tensor<float>({n_samples, 1, s, s});
  ds.labels.resize(n_samples);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);

  for (std::size_t i = 0; i < n_samples; ++i) {
    const int label = static_cast<int>(i % 2);
    ds.labels[i] = label;
    auto img = ds.images.slice(i);
    if (kind == SyntheticKind::separable) {
      const float offset = kSeparableMargin / 2 + 0.15f * unit(rng);
      const float level = label == 1 ? kSeparableThreshold + offset : kSeparableThreshold - offset;
      for (auto& v : img) v = level + 0.2f * (unit(rng) - 0.5f);
      detail::shift_mean(img, level);
    } else {
      bool texture = true, blob = true;
      if (label == 0) {
        const std::size_t variant = (i / 2) % 3;
        texture = variant == 0;
        blob = variant == 1;
      }
      const bool phase = unit(rng) < 0.5f;
      const std::size_t quadrant = static_cast<std::size_t>(unit(rng) * 4.0f) % 4;
      for (std::size_t r = 0; r < s; ++r) {
        for (std::size_t c = 0; c < s; ++c) {
          float v = 0.5f + 0.1f * (unit(rng) - 0.5f);
          if (texture) v += (((r + c) % 2 == 0) == phase ? 0.15f : -0.15f);
          const std::size_t q = (r >= s / 2 ? 2 : 0) + (c >= s / 2 ? 1 : 0);
          if (blob && q == quadrant) v += 0.25f;
          img[r * s + c] = v;
        }
      }
      detail::shift_mean(img, 0.5f + 0.02f * (unit(rng) - 0.5f));
    }
    for (auto& v : img) v = std::clamp(v, 0.0f, 1.0f);
  }
  return ds;
}

inline std::vector<double> mean_intensities(const Dataset& ds) {
  std::vector<double> means(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto img = ds.images.slice(i);
    means[i] = std::accumulate(img.begin(), img.end(), 0.0) / static_cast<double>(img.size());
  }
  return means;
}

// Best training accuracy of a single threshold on mean intensity (either
// polarity), for two-class datasets.
inline double mean_intensity_stump_accuracy(const Dataset& ds) {
  const auto means = mean_intensities(ds);
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return means[a] < means[b]; });
  const std::size_t n = ds.size();
  const std::size_t ones = static_cast<std::size_t>(std::count(ds.labels.begin(), ds.labels.end(), 1));
  // Threshold after position k: predict 0 below, 1 above (or the reverse).
  std::size_t zeros_below = 0, ones_below = 0, best = std::max(ones, n - ones);
  for (std::size_t k = 0; k < n; ++k) {
    (ds.labels[order[k]] == 1 ? ones_below : zeros_below)++;
    if (k + 1 < n && means[order[k]] == means[order[k + 1]]) continue;
    const std::size_t correct = zeros_below + (ones - ones_below);
    best = std::max({best, correct, n - correct});
  }
  return static_cast<double>(best) / static_cast<double>(n);
}

}  // namespace scnn
