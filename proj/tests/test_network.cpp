#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "reference.hpp"
#include "scnn/cli.hpp"
#include "scnn/network.hpp"

using scnn::Activation;
using scnn::MapShape;
using scnn::ShortcutIndicator;
using scnn::Tensor;

namespace {

std::vector<std::string> shape_strings(const std::vector<MapShape>& shapes) {
  std::vector<std::string> out;
  for (const auto& s : shapes) out.push_back(s.str());
  return out;
}

scnn::Parameters<double> random_params(const scnn::NetworkSpec& spec, const ShortcutIndicator& si,
                                       std::uint64_t seed, double scale = 0.5) {
  auto p = scnn::Parameters<double>::zeros(spec, si);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& a : scnn::named_arrays(p))
    for (auto& v : a.tensor->values()) v = u(rng);
  return p;
}

}  // namespace

TEST(ShortcutIndicator, ParseAndQuery) {
  const auto si = ShortcutIndicator::parse("01010");
  EXPECT_EQ(si.length(), 5u);
  EXPECT_EQ(si.str(), "01010");
  EXPECT_FALSE(si.selects(1));
  EXPECT_TRUE(si.selects(2));
  EXPECT_TRUE(si.selects(4));
  EXPECT_TRUE(si.selects(6));  // the top pooling layer has no bit and is always included
  EXPECT_FALSE(si.is_standard());
  EXPECT_TRUE(ShortcutIndicator::none(3).is_standard());
  EXPECT_EQ(ShortcutIndicator::from_value(0b100, 2).str(), "100");
  EXPECT_EQ(ShortcutIndicator::parse("110").value(), 6u);
  EXPECT_THROW(ShortcutIndicator::parse("01a"), scnn::SpecError);
  EXPECT_THROW(ShortcutIndicator::parse(""), scnn::SpecError);
  const auto all = ShortcutIndicator::all(2);
  ASSERT_EQ(all.size(), 8u);
  EXPECT_EQ(all.front().str(), "000");
  EXPECT_EQ(all.back().str(), "111");
}

TEST(Network, Table1ShapeChain) {
  const auto spec = fixtures::table1();
  const auto shapes = scnn::validate_spec(spec, ShortcutIndicator::none(3));
  EXPECT_EQ(shape_strings(shapes),
            (std::vector<std::string>{"28x28x6", "14x14x6", "10x10x12", "5x5x12", "4x4x16", "2x2x16"}));
  EXPECT_EQ(scnn::fcl_size(spec, ShortcutIndicator::parse("00000")), 64u);
  EXPECT_EQ(scnn::fcl_size(spec, ShortcutIndicator::parse("10000")), 4768u);
  EXPECT_EQ(scnn::fcl_size(spec, ShortcutIndicator::parse("11111")), 7700u);
}

TEST(Network, Table8ShapeChain) {
  const auto spec = fixtures::table8();
  const auto shapes = scnn::validate_spec(spec, ShortcutIndicator::none(3));
  EXPECT_EQ(shape_strings(shapes),
            (std::vector<std::string>{"32x32x32", "16x16x32", "16x16x32", "8x8x32", "8x8x16", "4x4x16"}));
  EXPECT_EQ(scnn::fcl_size(spec, ShortcutIndicator::none(3)), 256u);
}

TEST(Network, ValidationErrors) {
  auto spec = fixtures::table1();
  EXPECT_THROW(scnn::validate_spec(spec, ShortcutIndicator::parse("0000")), scnn::SpecError);
  auto tiny = spec;
  tiny.input = {1, 8, 8};
  EXPECT_THROW(scnn::validate_spec(tiny), scnn::SpecError);
  auto bad_classes = spec;
  bad_classes.classes = 1;
  EXPECT_THROW(scnn::validate_spec(bad_classes), scnn::SpecError);
  auto bad_lrn = spec;
  bad_lrn.stages[0].pool.lrn = scnn::LrnConfig{4, 1e-4, 0.75, 1};
  EXPECT_THROW(scnn::validate_spec(bad_lrn), scnn::SpecError);
}

TEST(Network, FclSizeMonotoneInBits) {
  const auto spec = fixtures::table1();
  for (const auto& a : ShortcutIndicator::all(3)) {
    for (const auto& b : ShortcutIndicator::all(3)) {
      if ((a.value() & b.value()) == a.value()) {
        EXPECT_LE(scnn::fcl_size(spec, a), scnn::fcl_size(spec, b)) << a.str() << " vs " << b.str();
      }
    }
  }
}

TEST(Network, ParameterLayout) {
  const auto spec = fixtures::table1();
  const auto si = ShortcutIndicator::parse("10000");
  const auto p = scnn::Parameters<double>::zeros(spec, si);
  EXPECT_EQ(p.conv[0].weight.shape(), (scnn::Shape{6, 1, 5, 5}));
  EXPECT_EQ(p.conv[1].weight.shape(), (scnn::Shape{12, 6, 5, 5}));
  EXPECT_EQ(p.conv[2].weight.shape(), (scnn::Shape{16, 12, 2, 2}));
  EXPECT_EQ(p.out_weight.shape(), (scnn::Shape{2, 4768}));
  std::vector<std::string> names;
  for (const auto& a : scnn::named_arrays(p)) names.push_back(a.name);
  EXPECT_EQ(names, (std::vector<std::string>{"conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias",
                                              "conv3.weight", "conv3.bias", "output.weight", "output.bias"}));
  EXPECT_THROW(scnn::check_params(spec, ShortcutIndicator::none(3), p), scnn::ShapeError);
}

TEST(Activation, Examples) {
  const auto r = scnn::activation(Tensor<double>({3}, std::vector<double>{-1, 0, 2}), Activation::relu);
  EXPECT_EQ(r, Tensor<double>({3}, std::vector<double>{0, 0, 2}));
  EXPECT_EQ(scnn::activate(0.0, Activation::sigmoid), 0.5);
  const auto d = scnn::activation_deriv(Tensor<double>({1}, 0.0), Activation::sigmoid);
  EXPECT_EQ(d[0], 0.25);
  EXPECT_EQ(scnn::activation_deriv(Tensor<double>({1}, 0.0), Activation::relu)[0], 0.0);
}

TEST(Activation, DerivativeMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-4, 4);
  for (auto kind : {Activation::relu, Activation::sigmoid}) {
    for (int i = 0; i < 100; ++i) {
      double x = u(rng);
      if (std::abs(x) < 1e-3) x += 0.01;
      const double h = 1e-6;
      const double num = (scnn::activate(x + h, kind) - scnn::activate(x - h, kind)) / (2 * h);
      const double ana = scnn::activation_deriv(Tensor<double>({1}, x), kind)[0];
      EXPECT_NEAR(ana, num, 1e-8) << x;
    }
  }
}

TEST(Lrn, Examples) {
  const scnn::LrnConfig no_alpha{5, 0.0, 0.75, 2.0};
  const auto x = fixtures::random_tensor({1, 3, 3}, 1);
  const auto y = scnn::lrn_forward(x, no_alpha).output;
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i] / std::pow(2.0, 0.75));
  const auto z = scnn::lrn_forward(Tensor<double>({4, 2, 2}, 0.0), scnn::LrnConfig{}).output;
  EXPECT_EQ(z, Tensor<double>({4, 2, 2}, 0.0));
}

TEST(Lrn, ForwardMatchesReference) {
  const scnn::LrnConfig cfg{3, 0.9, 0.75, 1.5};
  const auto x = fixtures::random_tensor({5, 3, 4}, 2, -2, 2);
  const auto y = scnn::lrn_forward(x, cfg).output;
  const auto r = ref::flatten(ref::Net::lrn(ref::to_map(x.data(), 5, 3, 4), cfg));
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(y[i], r[i], 1e-14 * std::max(1.0, std::abs(r[i])));
}

TEST(Lrn, BackwardMatchesFiniteDifferences) {
  for (const scnn::LrnConfig cfg : {scnn::LrnConfig{}, scnn::LrnConfig{3, 1.0, 0.75, 2.0}}) {
    const auto x = fixtures::random_tensor({3, 4, 4}, 3, -2, 2);
    const auto w = fixtures::random_tensor({3, 4, 4}, 4);
    const auto fwd = scnn::lrn_forward(x, cfg);
    const auto g = scnn::lrn_backward(x, fwd, w, cfg);
    const double eps = 1e-6;
    for (std::size_t i = 0; i < x.size(); ++i) {
      auto xp = x, xm = x;
      xp[i] += eps;
      xm[i] -= eps;
      const auto yp = scnn::lrn_forward(xp, cfg).output, ym = scnn::lrn_forward(xm, cfg).output;
      double num = 0;
      for (std::size_t j = 0; j < x.size(); ++j) num += w[j] * (yp[j] - ym[j]);
      num /= 2 * eps;
      EXPECT_LE(std::abs(g[i] - num) / std::max({std::abs(g[i]), std::abs(num), 1e-8}), 1e-6) << i;
    }
  }
}

TEST(Softmax, Examples) {
  const auto s = scnn::softmax(std::vector<double>{0, 0});
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> v(7), w(7);
    const double c = u(rng) * 10;
    for (std::size_t i = 0; i < v.size(); ++i) w[i] = (v[i] = u(rng)) + c;
    const auto a = scnn::softmax(v), b = scnn::softmax(w);
    double sum = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      EXPECT_NEAR(a[i], b[i], 1e-12);
      sum += a[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Softmax, LargeLogitsMatchExtendedPrecision) {
  const std::vector<double> u{1000, 0};
  const auto s = scnn::softmax(u);
  // exp(-1000) in long double; the double result rounds it to 0 without overflow.
  const long double tail = std::exp(-1000.0L);
  const long double p0 = 1.0L / (1.0L + tail), p1 = tail / (1.0L + tail);
  EXPECT_EQ(s[0], static_cast<double>(p0));
  EXPECT_NEAR(s[1], static_cast<double>(p1), 1e-300);
  EXPECT_TRUE(std::isfinite(s[0]) && std::isfinite(s[1]));
}

TEST(Forward, ZeroNetworkGivesUniformOutput) {
  const auto spec = scnn::tiny_gradcheck_spec();
  const auto si = ShortcutIndicator::parse("111");
  const auto p = scnn::Parameters<double>::zeros(spec, si);
  const auto cache = scnn::forward(spec, p, si, Tensor<double>({2, 1, 6, 6}, 0.0));
  for (double v : cache.fcl.values()) EXPECT_EQ(v, 0.0);
  for (double v : cache.probs.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Forward, HandRolledSingleStage) {
  scnn::NetworkSpec spec;
  spec.input = {1, 4, 4};
  spec.classes = 2;
  spec.stages = {fixtures::stage(1, 3, {}, 2, 2)};
  const auto si = ShortcutIndicator::parse("1");
  auto p = scnn::Parameters<double>::zeros(spec, si);
  p.conv[0].weight.fill(1.0);
  const auto x = fixtures::random_tensor({1, 1, 4, 4}, 21);
  const auto cache = scnn::forward(spec, p, si, x);
  // Oracle: 3x3 box sums, relu, then the max of the four.
  std::vector<double> h1;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b) s += x[(i + a) * 4 + j + b];
      h1.push_back(std::max(s, 0.0));
    }
  const double h2 = *std::max_element(h1.begin(), h1.end());
  ASSERT_EQ(cache.fcl.dim(1), 5u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(cache.fcl(0, i), h1[i], 1e-15);
  EXPECT_EQ(cache.fcl(0, 4), h2);
}

TEST(Forward, StandardStyleFclIsLastPool) {
  const auto spec = fixtures::table1();
  const auto si = ShortcutIndicator::none(3);
  const auto p = random_params(spec, si, 4, 0.2);
  const auto x = fixtures::random_tensor({2, 1, 32, 32}, 5, 0, 1);
  const auto cache = scnn::forward(spec, p, si, x);
  const auto& h6 = cache.activation(6);
  ASSERT_EQ(cache.fcl.size(), h6.size());
  for (std::size_t i = 0; i < h6.size(); ++i) EXPECT_EQ(cache.fcl[i], h6[i]);
}

TEST(Forward, ShortcutBitsOnlyExtendTheFcl) {
  const auto spec = scnn::tiny_gradcheck_spec(Activation::relu, scnn::PoolMode::max, true);
  const auto x = fixtures::random_tensor({3, 1, 6, 6}, 6);
  const auto base_si = ShortcutIndicator::none(2);
  const auto base_p = random_params(spec, base_si, 7);
  const auto base = scnn::forward(spec, base_p, base_si, x);
  for (const auto& si : ShortcutIndicator::all(2)) {
    auto p = scnn::Parameters<double>::zeros(spec, si);
    p.conv = base_p.conv;
    const auto c = scnn::forward(spec, p, si, x);
    for (std::size_t k = 1; k <= 4; ++k) EXPECT_EQ(c.activation(k), base.activation(k)) << si.str() << " h" << k;
    // Layout: selected layers in index order, channel-major then row-major.
    for (std::size_t l = 0; l < 3; ++l) {
      std::size_t off = 0;
      for (std::size_t k = 1; k <= 4; ++k) {
        if (!si.selects(k)) continue;
        const auto h = c.activation(k).slice(l);
        for (std::size_t i = 0; i < h.size(); ++i) EXPECT_EQ(c.fcl(l, off + i), h[i]);
        off += h.size();
      }
      EXPECT_EQ(off, c.fcl.dim(1));
      double sum = 0;
      for (double v : c.probs.slice(l)) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(Forward, MatchesReferenceStandardCnn) {
  for (auto mode : {scnn::PoolMode::max, scnn::PoolMode::avg}) {
    for (auto act : {Activation::relu, Activation::sigmoid}) {
      auto spec = fixtures::table8();
      spec.input = {2, 12, 12};
      for (auto& st : spec.stages) {
        st.conv.out_channels = 3;
        st.conv.activation = act;
        st.pool.params.mode = mode;
      }
      const auto si = ShortcutIndicator::none(3);
      const auto p = random_params(spec, si, 9, 0.4);
      const auto x = fixtures::random_tensor({2, 2, 12, 12}, 10);
      const auto cache = scnn::forward(spec, p, si, x);
      ref::Net net{spec, p};
      for (std::size_t l = 0; l < 2; ++l) {
        const auto r = net.forward(ref::to_map(x.slice(l).data(), 2, 12, 12));
        for (std::size_t i = 0; i < r.fcl.size(); ++i) {
          EXPECT_LE(std::abs(cache.fcl(l, i) - r.fcl[i]), 1e-12 * std::max(std::abs(r.fcl[i]), 1e-300));
        }
        for (std::size_t k = 0; k < 10; ++k) EXPECT_NEAR(cache.probs(l, k), r.probs[k], 1e-14);
      }
    }
  }
}

TEST(Forward, ThreadedMatchesSerialBitwise) {
  const auto spec = fixtures::table1();
  const auto si = ShortcutIndicator::parse("01010");
  const auto p = random_params(spec, si, 11, 0.2);
  const auto x = fixtures::random_tensor({7, 1, 32, 32}, 12, 0, 1);
  const auto a = scnn::forward(spec, p, si, x);
  const auto b = scnn::forward(spec, p, si, x, scnn::ExecOptions{3, true});
  EXPECT_EQ(a.fcl, b.fcl);
  EXPECT_EQ(a.probs, b.probs);
}

TEST(Forward, RejectsMismatchedInput) {
  const auto spec = scnn::tiny_gradcheck_spec();
  const auto si = ShortcutIndicator::none(2);
  const auto p = scnn::Parameters<double>::zeros(spec, si);
  EXPECT_THROW(scnn::forward(spec, p, si, Tensor<double>({1, 1, 5, 6})), scnn::ShapeError);
  EXPECT_THROW(scnn::forward(spec, p, ShortcutIndicator::parse("111"), Tensor<double>({1, 1, 6, 6})),
               scnn::ShapeError);
}

TEST(Argmax, TiesGoToLowerIndex) {
  const std::vector<double> v{0.25, 0.5, 0.5};
  EXPECT_EQ(scnn::argmax(std::span<const double>(v)), 1u);
}
