#pragma once

#include <random>

#include "scnn/network.hpp"

namespace fixtures {

inline scnn::Stage stage(std::size_t out, std::size_t k, scnn::Padding pad, std::size_t pw, std::size_t ps,
                         bool ceil = false, scnn::PoolMode mode = scnn::PoolMode::max,
                         scnn::Activation act = scnn::Activation::relu) {
  scnn::Stage s;
  s.conv = {out, k, k, 1, pad, act};
  s.pool.params = {pw, ps, mode, ceil};
  return s;
}

// Gender-classification network: 32x32x1 input, three conv/pool pairs.
inline scnn::NetworkSpec table1() {
  scnn::NetworkSpec s;
  s.input = {1, 32, 32};
  s.classes = 2;
  s.stages = {stage(6, 5, {}, 2, 2), stage(12, 5, {}, 2, 2), stage(16, 2, {}, 2, 2)};
  return s;
}

// CIFAR-10 network with LRN after every pool and the one-sided padded 2x2 conv.
inline scnn::NetworkSpec table8() {
  scnn::NetworkSpec s;
  s.input = {3, 32, 32};
  s.classes = 10;
  s.stages = {stage(32, 5, scnn::Padding::uniform(2), 3, 2, true), stage(32, 5, scnn::Padding::uniform(2), 3, 2, true),
              stage(16, 2, scnn::Padding{1, 0, 1, 0}, 3, 2, true)};
  for (auto& st : s.stages) st.pool.lrn = scnn::LrnConfig{};
  return s;
}

inline scnn::NetworkSpec lenet() {
  scnn::NetworkSpec s;
  s.input = {1, 28, 28};
  s.classes = 10;
  s.stages = {stage(20, 5, {}, 2, 2), stage(50, 5, {}, 2, 2)};
  return s;
}

inline scnn::Tensor<double> random_tensor(scnn::Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  scnn::Tensor<double> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

}  // namespace fixtures
