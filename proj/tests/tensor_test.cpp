#include <gtest/gtest.h>

#include <cmath>

#include "topogan/error.hpp"
#include "topogan/gradcheck.hpp"
#include "topogan/optim.hpp"
#include "topogan/random.hpp"
#include "topogan/tensor.hpp"

using namespace topogan::ad;

namespace {

Tensor random_tensor(Shape shape, topogan::Rng& rng, bool requires_grad = true, double lo = -1,
                     double hi = 1) {
  std::vector<double> v(numel_of(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Projects a tensor onto fixed random weights so every output entry carries a
// distinct, order-one gradient.
Tensor project(const Tensor& t, const std::vector<double>& w) {
  return sum(mul(t, Tensor::from(t.shape(), w)));
}

std::vector<double> random_weights(std::size_t n, topogan::Rng& rng) {
  std::vector<double> w(n);
  for (double& x : w) x = rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1 : 1);
  return w;
}

// Direct cross-correlation oracle.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& k, int s, int p) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int f = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const int ho = (h + 2 * p - kh) / s + 1, wo = (w + 2 * p - kw) / s + 1;
  std::vector<double> out(static_cast<std::size_t>(n) * f * ho * wo, 0.0);
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < f; ++o)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          double acc = 0;
          for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j) {
                const int iy = y * s - p + i, ix = xx * s - p + j;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += x.data()[((b * c + ch) * h + iy) * w + ix] * k.data()[((o * c + ch) * kh + i) * kw + j];
              }
          out[((b * f + o) * ho + y) * wo + xx] = acc;
        }
  return out;
}

// Transposed convolution as an explicit scatter.
std::vector<double> conv_transpose_oracle(const Tensor& x, const Tensor& k, int s, int p) {
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  const int ho = (h - 1) * s - 2 * p + kh, wo = (w - 1) * s - 2 * p + kw;
  std::vector<double> out(static_cast<std::size_t>(n) * cout * ho * wo, 0.0);
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < cin; ++ci)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          for (int co = 0; co < cout; ++co)
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j) {
                const int oy = y * s - p + i, ox = xx * s - p + j;
                if (oy < 0 || oy >= ho || ox < 0 || ox >= wo) continue;
                out[((b * cout + co) * ho + oy) * wo + ox] +=
                    x.data()[((b * cin + ci) * h + y) * w + xx] * k.data()[((ci * cout + co) * kh + i) * kw + j];
              }
  return out;
}

}  // namespace

TEST(Conv2d, OnesGiveNine) {
  auto x = Tensor::full({1, 1, 3, 3}, 1.0);
  auto k = Tensor::full({1, 1, 3, 3}, 1.0);
  auto y = conv2d(x, k, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 9.0);
}

TEST(Conv2d, CenterKernelIsIdentity) {
  topogan::Rng rng(1);
  auto x = random_tensor({2, 1, 5, 4}, rng, false);
  std::vector<double> kv(9, 0.0);
  kv[4] = 1.0;
  auto y = conv2d(x, Tensor::from({1, 1, 3, 3}, kv), 1, 1);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, MatchesLoopOracle) {
  topogan::Rng rng(2);
  auto x = random_tensor({1, 2, 5, 5}, rng, false);
  auto k = random_tensor({3, 2, 3, 3}, rng, false);
  for (auto [s, p] : {std::pair{1, 0}, std::pair{1, 1}, std::pair{2, 1}}) {
    const auto y = conv2d(x, k, s, p);
    const auto ref = conv_oracle(x, k, s, p);
    ASSERT_EQ(y.numel(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
  }
}

TEST(Conv2d, NonIntegralOutputIsShapeError) {
  EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 3, 3}), 2, 0),
               topogan::ShapeError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 1, 3, 3}), 1, 0),
               topogan::ShapeError);
}

TEST(ConvTranspose2d, MatchesScatterOracle) {
  topogan::Rng rng(3);
  auto x = random_tensor({2, 3, 4, 4}, rng, false);
  auto k = random_tensor({3, 2, 4, 4}, rng, false);
  const auto y = conv_transpose2d(x, k, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{2, 2, 8, 8}));
  const auto ref = conv_transpose_oracle(x, k, 2, 1);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
}

TEST(ConvTranspose2d, IsAdjointOfConv2d) {
  // <conv(x), y> == <x, conv_transpose(y)>
  topogan::Rng rng(4);
  auto x = random_tensor({2, 2, 8, 8}, rng, false);
  auto k = random_tensor({3, 2, 4, 4}, rng, false);
  auto y = random_tensor({2, 3, 4, 4}, rng, false);
  const auto cx = conv2d(x, k, 2, 1);
  const auto ty = conv_transpose2d(y, k, 2, 1);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) lhs += cx.data()[i] * y.data()[i];
  for (std::size_t i = 0; i < x.numel(); ++i) rhs += x.data()[i] * ty.data()[i];
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(Backward, MeanAndHalfSquare) {
  topogan::Rng rng(5);
  auto x = random_tensor({7}, rng);
  mean(x).backward();
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0 / 7.0);

  x.zero_grad();
  scale(sum(mul(x, x)), 0.5).backward();
  for (std::size_t i = 0; i < 7; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], x.data()[i]);
}

TEST(Backward, AccumulatesAndLeavesUntrackedAlone) {
  auto x = Tensor::from({2}, {1.0, 2.0}, true);
  auto c = Tensor::from({2}, {3.0, 4.0}, false);
  auto loss = sum(mul(x, c));
  loss.backward();
  loss.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 8.0);
  EXPECT_TRUE(c.grad().empty());
}

TEST(Backward, NonScalarLossIsContractError) {
  auto x = Tensor::zeros({3}, true);
  EXPECT_THROW(scale(x, 2.0).backward(), topogan::ContractError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  auto x = Tensor::zeros({3}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = sum(scale(x, 2.0));
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(grad_mode_enabled());
}

TEST(Backward, SharedSubexpressionGradient) {
  // d/dx (x*x + x) at x=3 is 7
  auto x = Tensor::scalar(3.0, true);
  auto y = add(mul(x, x), x);
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(LogClamp, FiniteAtZeroAndOne) {
  auto s = Tensor::from({3}, {0.0, 1.0, 0.5}, true);
  auto l = add(log_clamped(s), log_clamped(one_minus(s)));
  for (double v : l.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(l.data()[0], std::log(1e-12), 1e-12);
  sum(l).backward();
  for (double g : s.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(GradCheck, Primitives) {
  topogan::Rng rng(6);
  auto check = [&](const char* name, const std::function<Tensor(const Tensor&)>& op, Shape in,
                   double lo = -1, double hi = 1) {
    auto x = random_tensor(in, rng, true, lo, hi);
    const auto probe = op(x);
    const auto w = random_weights(probe.numel(), rng);
    const auto r = grad_check([&] { return project(op(x), w); }, {{name, x}});
    EXPECT_LT(r.max_rel_error, 1e-6) << name << " worst at " << r.worst_index << ": "
                                     << r.worst_analytic << " vs " << r.worst_numeric;
  };
  check("sigmoid", [](const Tensor& x) { return sigmoid(x); }, {3, 4}, -3, 3);
  check("tanh", [](const Tensor& x) { return tanh(x); }, {3, 4}, -2, 2);
  check("exp", [](const Tensor& x) { return exp(x); }, {5});
  check("log", [](const Tensor& x) { return log_clamped(x); }, {6}, 0.1, 2.0);
  check("one_minus", [](const Tensor& x) { return one_minus(x); }, {4});
  check("scale", [](const Tensor& x) { return add_scalar(scale(x, -2.5), 0.3); }, {4});
  check("reshape", [](const Tensor& x) { return reshape(x, {6, 2}); }, {3, 4});
  check("mean", [](const Tensor& x) { return mean(x); }, {3, 5});
  check("mul_self", [](const Tensor& x) { return mul(x, sub(x, scale(x, 0.5))); }, {7});

  // leaky-ReLU with inputs kept at least 1e-3 away from the kink
  auto x = random_tensor({40}, rng, true, 1e-3, 1.0);
  for (std::size_t i = 0; i < x.numel(); i += 2) x.mutable_data()[i] *= -1;
  const auto w = random_weights(40, rng);
  const auto r = grad_check([&] { return project(leaky_relu(x, 0.2), w); }, {{"leaky", x}});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, BinaryAndStructuralOps) {
  topogan::Rng rng(7);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  auto w = random_weights(6, rng);
  auto r = grad_check([&] { return project(matmul(a, b), w); }, {{"a", a}, {"b", b}});
  EXPECT_LT(r.max_rel_error, 1e-8);

  auto x = random_tensor({2, 3, 2, 2}, rng), bias = random_tensor({3}, rng);
  w = random_weights(24, rng);
  r = grad_check([&] { return project(add_bias(x, bias), w); }, {{"x", x}, {"bias", bias}});
  EXPECT_LT(r.max_rel_error, 1e-6);

  auto p = random_tensor({2, 3}, rng), q = random_tensor({2, 2}, rng);
  w = random_weights(10, rng);
  r = grad_check([&] { return project(concat({p, q}, 1), w); }, {{"p", p}, {"q", q}});
  EXPECT_LT(r.max_rel_error, 1e-6);
  auto u = random_tensor({2, 1, 3}, rng), v = random_tensor({2, 2, 3}, rng);
  w = random_weights(18, rng);
  r = grad_check([&] { return project(concat({u, v}, 1), w); }, {{"u", u}, {"v", v}});
  EXPECT_LT(r.max_rel_error, 1e-6);

  auto m = random_tensor({4, 3}, rng), n = random_tensor({4, 3}, rng);
  w = random_weights(12, rng);
  r = grad_check([&] { return project(sub(mul(m, n), add(m, n)), w); }, {{"m", m}, {"n", n}});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, Convolutions) {
  topogan::Rng rng(8);
  auto x = random_tensor({2, 2, 6, 6}, rng), k = random_tensor({3, 2, 4, 4}, rng);
  auto w = random_weights(2 * 3 * 3 * 3, rng);
  auto r = grad_check([&] { return project(conv2d(x, k, 2, 1), w); }, {{"x", x}, {"k", k}});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_name << " " << r.worst_analytic << " vs " << r.worst_numeric;

  auto k3 = random_tensor({2, 2, 3, 3}, rng);
  w = random_weights(2 * 2 * 6 * 6, rng);
  r = grad_check([&] { return project(conv2d(x, k3, 1, 1), w); }, {{"x", x}, {"k", k3}});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_name << " " << r.worst_analytic << " vs " << r.worst_numeric;

  auto y = random_tensor({2, 3, 3, 3}, rng), kt = random_tensor({3, 2, 4, 4}, rng);
  w = random_weights(2 * 2 * 6 * 6, rng);
  r = grad_check([&] { return project(conv_transpose2d(y, kt, 2, 1), w); }, {{"y", y}, {"k", kt}});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_name << " " << r.worst_analytic << " vs " << r.worst_numeric;
}

TEST(GradCheck, LinearLayerIsTight) {
  topogan::Rng rng(9);
  auto x = random_tensor({5, 4}, rng, false);
  auto wt = random_tensor({4, 3}, rng), b = random_tensor({3}, rng);
  const auto w = random_weights(15, rng);
  const auto r = grad_check([&] { return project(add_bias(matmul(x, wt), b), w); },
                            {{"weight", wt}, {"bias", b}});
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, ThreeLayerNetwork) {
  topogan::Rng rng(10);
  auto x = random_tensor({4, 5}, rng, false);
  auto w1 = random_tensor({5, 6}, rng), b1 = random_tensor({6}, rng);
  auto w2 = random_tensor({6, 4}, rng), b2 = random_tensor({4}, rng);
  auto w3 = random_tensor({4, 1}, rng), b3 = random_tensor({1}, rng);
  auto net = [&] {
    auto h = tanh(add_bias(matmul(x, w1), b1));
    h = sigmoid(add_bias(matmul(h, w2), b2));
    return mean(log_clamped(sigmoid(add_bias(matmul(h, w3), b3))));
  };
  const auto r = grad_check(net, {{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}, {"w3", w3}, {"b3", b3}});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_name << "[" << r.worst_index << "]";
  EXPECT_EQ(r.checked, 30u + 6 + 24 + 4 + 4 + 1);
}

TEST(GradCheck, MinibatchSimilarity) {
  topogan::Rng rng(11);
  auto m = random_tensor({4, 2, 3}, rng);
  const auto w = random_weights(8, rng);
  const auto r = grad_check([&] { return project(minibatch_similarity(m), w); }, {{"m", m}});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  auto p = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  Adam opt({p}, AdamConfig{});
  p.mutable_grad();  // allocate zeros
  opt.step();
  EXPECT_EQ(opt.step_count(), 1);
  EXPECT_EQ(p.data()[0], 1.0);
  EXPECT_EQ(p.data()[1], -2.0);
}

TEST(Adam, FirstStepMovesBySignTimesRate) {
  auto p = Tensor::from({3}, {0.0, 0.0, 0.0}, true);
  AdamConfig cfg;
  cfg.lr = 0.01;
  cfg.eps = 1e-14;
  Adam opt({p}, cfg);
  auto g = p.mutable_grad();
  g[0] = 3.0;
  g[1] = -1e-3;
  g[2] = 50.0;
  opt.step();
  EXPECT_NEAR(p.data()[0], -0.01, 1e-12);
  EXPECT_NEAR(p.data()[1], 0.01, 1e-9);
  EXPECT_NEAR(p.data()[2], -0.01, 1e-12);
}

TEST(Adam, QuadraticRolloutShrinks) {
  auto w = Tensor::from({1}, {1.0}, true);
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam opt({w}, cfg);
  double prev = 1.0;
  for (int i = 0; i < 10; ++i) {
    opt.zero_grad();
    sum(mul(w, w)).backward();
    opt.step();
    EXPECT_LT(std::abs(w.data()[0]), prev);
    prev = std::abs(w.data()[0]);
  }
}

TEST(Adam, RestoreRejectsMismatchedMoments) {
  auto p = Tensor::zeros({3}, true);
  Adam opt({p}, AdamConfig{});
  EXPECT_THROW(opt.restore(1, {{0, 0}}, {{0, 0, 0}}), topogan::ContractError);
  EXPECT_THROW(opt.restore(1, {}, {}), topogan::ContractError);
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  auto run = [] {
    topogan::Rng rng(12);
    auto x = random_tensor({3, 2, 8, 8}, rng, false);
    auto k = random_tensor({4, 2, 4, 4}, rng, true);
    auto y = conv2d(x, k, 2, 1);
    auto loss = mean(sigmoid(y));
    loss.backward();
    return std::pair{loss.item(), std::vector<double>(k.grad().begin(), k.grad().end())};
  };
  EXPECT_EQ(run(), run());
}
