#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "reference.hpp"
#include "scnn/autograd.hpp"
#include "scnn/cli.hpp"

using scnn::Activation;
using scnn::PoolMode;
using scnn::ShortcutIndicator;
using scnn::Tensor;

namespace {

Tensor<double> one_hot_rows(const std::vector<std::size_t>& labels, std::size_t classes) {
  Tensor<double> y({labels.size(), classes});
  for (std::size_t l = 0; l < labels.size(); ++l) y(l, labels[l]) = 1.0;
  return y;
}

}  // namespace

TEST(Loss, CrossEntropyExamples) {
  EXPECT_EQ(scnn::cross_entropy(std::vector<double>{1, 0}, std::vector<double>{1, 0}), 0.0);
  EXPECT_NEAR(scnn::cross_entropy(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 0}), 0.693147180559945, 1e-12);
  // Clamp keeps a zero probability finite: -log(1e-12).
  EXPECT_NEAR(scnn::cross_entropy(std::vector<double>{0, 1}, std::vector<double>{1, 0}), 27.631021115928547, 1e-9);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0, 3);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> u(5);
    for (auto& v : u) v = g(rng);
    std::vector<double> y(5, 0.0);
    y[static_cast<std::size_t>(t) % 5] = 1;
    EXPECT_GE(scnn::cross_entropy(scnn::softmax(u), y), 0.0);
  }
  EXPECT_THROW(scnn::cross_entropy(std::vector<double>{1}, std::vector<double>{1, 0}), scnn::ShapeError);
}

TEST(Loss, OutputDeltaExamples) {
  EXPECT_EQ(scnn::output_delta(std::vector<double>{0.2, 0.8}, std::vector<double>{0.2, 0.8}),
            (std::vector<double>{0, 0}));
  const auto d = scnn::output_delta(std::vector<double>{0.7, 0.3}, std::vector<double>{1, 0});
  EXPECT_NEAR(d[0], -0.3, 1e-15);
  EXPECT_NEAR(d[1], 0.3, 1e-15);
  const auto o = scnn::softmax(std::vector<double>{0.3, -1.2, 2.0, 0.1});
  const auto dd = scnn::output_delta(o, std::vector<double>{0, 0, 1, 0});
  EXPECT_NEAR(std::accumulate(dd.begin(), dd.end(), 0.0), 0.0, 1e-15);
  EXPECT_THROW(scnn::output_delta(std::vector<double>{1}, std::vector<double>{1, 0}), scnn::ShapeError);
}

TEST(SplitFcl, Examples) {
  const auto spec = fixtures::table1();
  const auto none = ShortcutIndicator::none(3);
  std::vector<double> d(64);
  std::iota(d.begin(), d.end(), 0.0);
  const auto s0 = scnn::split_fcl_delta<double>(d, spec, none);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_TRUE(s0[k].empty());
  EXPECT_EQ(std::vector<double>(s0[5].values().begin(), s0[5].values().end()), d);

  const auto si = ShortcutIndicator::parse("10000");
  std::vector<double> big(4768);
  std::iota(big.begin(), big.end(), 1.0);
  const auto s1 = scnn::split_fcl_delta<double>(big, spec, si);
  EXPECT_EQ(s1[0].size(), 4704u);
  EXPECT_EQ(s1[5].size(), 64u);
  EXPECT_EQ(s1[0].shape(), (scnn::Shape{6, 28, 28}));
  EXPECT_EQ(scnn::concat_fcl_slices(s1), big);
  EXPECT_THROW(scnn::split_fcl_delta<double>(d, spec, si), scnn::ShapeError);

  const auto all = ShortcutIndicator::parse("11111");
  std::vector<double> full(7700);
  std::mt19937_64 rng(2);
  for (auto& v : full) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  EXPECT_EQ(scnn::concat_fcl_slices(scnn::split_fcl_delta<double>(full, spec, all)), full);
}

TEST(Backward, ZeroOutputDeltaGivesZeroGradients) {
  const auto spec = scnn::tiny_gradcheck_spec(Activation::sigmoid, PoolMode::avg, true);
  const auto si = ShortcutIndicator::parse("101");
  const auto p = scnn::random_parameters(spec, si, 3);
  const auto cache = scnn::forward(spec, p, si, fixtures::random_tensor({2, 1, 6, 6}, 4));
  const auto res = scnn::backward(spec, p, si, cache, cache.probs);
  for (const auto& a : scnn::named_arrays(res.grads))
    for (double v : a.tensor->values()) EXPECT_EQ(v, 0.0) << a.name;
}

TEST(Backward, SensitivityShapesAndSlices) {
  const auto spec = scnn::tiny_gradcheck_spec();
  const auto si = ShortcutIndicator::parse("110");
  const auto p = scnn::random_parameters(spec, si, 5);
  const auto cache = scnn::forward(spec, p, si, fixtures::random_tensor({3, 1, 6, 6}, 6));
  const auto res = scnn::backward(spec, p, si, cache, one_hot_rows({0, 2, 1}, 3));
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(res.sens.layers[k].shape(), cache.layers[k].act.shape());
  }
  for (std::size_t l = 0; l < 3; ++l) {
    std::vector<double> joined;
    for (const auto& s : res.sens.fc_slices) {
      if (s.empty()) continue;
      joined.insert(joined.end(), s.slice(l).begin(), s.slice(l).end());
    }
    EXPECT_EQ(joined, std::vector<double>(res.sens.fcl.slice(l).begin(), res.sens.fcl.slice(l).end()));
  }
  EXPECT_TRUE(res.sens.fc_slices[2].empty());
  EXPECT_EQ(res.grads.out_weight.shape(), p.out_weight.shape());
}

// A selected layer's sensitivity is the SI=0 sensitivity plus its FC slice
// (through f' for conv layers), given the same output delta.
TEST(Backward, ShortcutAdditivity) {
  const auto spec = scnn::tiny_gradcheck_spec(Activation::sigmoid, PoolMode::max, false);
  const auto x = fixtures::random_tensor({2, 1, 6, 6}, 7);
  const auto y = one_hot_rows({1, 2}, 3);
  for (const char* bits : {"100", "010", "001"}) {
    const auto si = ShortcutIndicator::parse(bits);
    const auto p = scnn::random_parameters(spec, si, 8);
    const auto cache = scnn::forward(spec, p, si, x);
    const auto res = scnn::backward(spec, p, si, cache, y);

    // Standard network sharing the conv banks and the h4 output columns.
    const auto none = ShortcutIndicator::none(2);
    auto p0 = scnn::Parameters<double>::zeros(spec, none);
    p0.conv = p.conv;
    p0.out_bias = p.out_bias;
    const std::size_t F = cache.layout.total, off = cache.layout.offset[3];
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t f = 0; f < 3; ++f) p0.out_weight(c, f) = p.out_weight(c, off + f);
    const auto c0 = scnn::forward(spec, p0, none, x);
    Tensor<double> y0({2, 3});
    for (std::size_t i = 0; i < y0.size(); ++i) y0[i] = c0.probs[i] - res.sens.output[i];
    const auto r0 = scnn::backward(spec, p0, none, c0, y0);
    ASSERT_EQ(F, 3 + cache.layout.length[0] + cache.layout.length[1] + cache.layout.length[2]);

    const std::size_t k = bits[0] == '1' ? 0 : bits[1] == '1' ? 1 : 2;
    const auto& d = res.sens.layers[k];
    const auto& d0 = r0.sens.layers[k];
    const auto& slice = res.sens.fc_slices[k];
    const auto& h = cache.layers[k].act;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double fprime = k % 2 == 0 ? h[i] * (1 - h[i]) : 1.0;
      EXPECT_NEAR(d[i], d0[i] + fprime * slice[i], 1e-15) << bits << " element " << i;
    }
  }
}

TEST(Backward, StandardStyleMatchesReference) {
  for (auto mode : {PoolMode::max, PoolMode::avg}) {
    for (auto act : {Activation::relu, Activation::sigmoid}) {
      auto spec = fixtures::table8();
      spec.input = {2, 12, 12};
      spec.classes = 4;
      for (auto& st : spec.stages) {
        st.conv.out_channels = 3;
        st.conv.activation = act;
        st.pool.params.mode = mode;
        st.pool.lrn = scnn::LrnConfig{3, 0.5, 0.75, 1.0};
      }
      const auto si = ShortcutIndicator::none(3);
      const auto p = scnn::random_parameters(spec, si, 12);
      const auto x = fixtures::random_tensor({3, 2, 12, 12}, 13);
      const std::vector<std::size_t> labels{0, 3, 1};
      const auto cache = scnn::forward(spec, p, si, x);
      const auto g = scnn::backward(spec, p, si, cache, one_hot_rows(labels, 4)).grads;

      ref::Net net{spec, p};
      auto rg = scnn::Parameters<double>::zeros(spec, si);
      for (std::size_t l = 0; l < 3; ++l) net.backward(net.forward(ref::to_map(x.slice(l).data(), 2, 12, 12)), labels[l], rg);
      scnn::scale_into(rg, 1.0 / 3.0);
      const auto ga = scnn::named_arrays(g);
      const auto ra = scnn::named_arrays(rg);
      double worst = 0;
      for (std::size_t a = 0; a < ga.size(); ++a) {
        for (std::size_t i = 0; i < ga[a].tensor->size(); ++i) {
          const double u = (*ga[a].tensor)[i], v = (*ra[a].tensor)[i];
          worst = std::max(worst, std::abs(u - v) / std::max({std::abs(u), std::abs(v), 1e-300}));
        }
      }
      EXPECT_LE(worst, 1e-12) << scnn::to_string(act) << "/" << scnn::to_string(mode);
    }
  }
}

TEST(Backward, ThreadedReductionsAgree) {
  const auto spec = fixtures::table1();
  const auto si = ShortcutIndicator::parse("01010");
  const auto p = scnn::random_parameters(spec, si, 14);
  const auto x = fixtures::random_tensor({8, 1, 32, 32}, 15, 0, 1);
  const auto y = one_hot_rows({0, 1, 1, 0, 1, 0, 0, 1}, 2);
  const auto cache = scnn::forward(spec, p, si, x);
  const auto serial = scnn::backward(spec, p, si, cache, y).grads;
  const auto det_a = scnn::backward(spec, p, si, cache, y, scnn::ExecOptions{3, true}).grads;
  const auto det_b = scnn::backward(spec, p, si, cache, y, scnn::ExecOptions{3, true}).grads;
  EXPECT_TRUE(det_a == det_b);
  const auto loose = scnn::backward(spec, p, si, cache, y, scnn::ExecOptions{3, false}).grads;
  const auto s = scnn::named_arrays(serial);
  const auto l = scnn::named_arrays(loose);
  for (std::size_t a = 0; a < s.size(); ++a)
    for (std::size_t i = 0; i < s[a].tensor->size(); ++i) EXPECT_NEAR((*s[a].tensor)[i], (*l[a].tensor)[i], 1e-12);
}

TEST(GradCheck, SigmoidEverySi) {
  for (auto mode : {PoolMode::max, PoolMode::avg}) {
    const auto spec = scnn::tiny_gradcheck_spec(Activation::sigmoid, mode, false);
    for (const auto& si : ShortcutIndicator::all(2)) {
      const auto r = scnn::grad_check(spec, si, 1, 1e-5);
      EXPECT_LE(r.max_rel, 1e-6) << si.str();
    }
  }
}

TEST(GradCheck, ReluAndLrn) {
  for (const auto& si : ShortcutIndicator::all(2)) {
    const auto r = scnn::grad_check(scnn::tiny_gradcheck_spec(Activation::relu, PoolMode::max, true), si, 2, 1e-5);
    EXPECT_LE(r.max_rel, 1e-5) << si.str();
    EXPECT_FALSE(r.kinks_unresolved);
  }
}

TEST(GradCheck, DeadReluRegionIsFlagged) {
  const auto spec = scnn::tiny_gradcheck_spec(Activation::relu, PoolMode::max, false);
  const auto si = ShortcutIndicator::parse("000");
  const auto zeros = scnn::Parameters<double>::zeros(spec, si);
  scnn::GradCheckOptions opts;
  opts.params = &zeros;
  opts.max_reseeds = 3;
  const auto r = scnn::grad_check(spec, si, 3, 1e-5, opts);
  EXPECT_TRUE(r.dead_region());
  EXPECT_TRUE(r.passed(1e-5));
  EXPECT_TRUE(r.groups.front().dead());
  EXPECT_FALSE(r.groups.back().dead());  // output bias still sees o - y
}

TEST(GradCheck, InjectedFaultIsDetected) {
  scnn::GradCheckOptions opts;
  opts.corrupt = scnn::inject_gradient_fault;
  const auto r = scnn::grad_check(scnn::tiny_gradcheck_spec(), ShortcutIndicator::parse("010"), 4, 1e-5, opts);
  EXPECT_FALSE(r.passed(1e-5));
}

TEST(GradCheck, ErrorShrinksQuadraticallyWithEpsilon) {
  // Smooth network so truncation error dominates at both step sizes.
  const auto spec = scnn::tiny_gradcheck_spec(Activation::sigmoid, PoolMode::avg, true);
  const auto si = ShortcutIndicator::parse("111");
  const auto coarse = scnn::grad_check(spec, si, 5, 1e-2);
  const auto fine = scnn::grad_check(spec, si, 5, 1e-3);
  // A second-order method gains a factor of ~100 per decade of epsilon.
  EXPECT_GT(coarse.max_rel / fine.max_rel, 30.0);
  EXPECT_LT(coarse.max_rel / fine.max_rel, 300.0);
  const auto tiny = scnn::grad_check(spec, si, 5, 1e-5);
  EXPECT_LT(tiny.max_rel, fine.max_rel);
}

TEST(GradCheck, NeverMutatesCallerParameters) {
  const auto spec = scnn::tiny_gradcheck_spec();
  const auto si = ShortcutIndicator::parse("011");
  const auto p = scnn::random_parameters(spec, si, 6);
  const auto copy = p;
  scnn::GradCheckOptions opts;
  opts.params = &p;
  scnn::grad_check(spec, si, 6, 1e-5, opts);
  EXPECT_TRUE(p == copy);
}
