#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "nsde/adam.hpp"
#include "nsde/gradcheck.hpp"
#include "nsde/mlp.hpp"
#include "nsde/rng.hpp"
#include "nsde/tensor.hpp"

using namespace nsde;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(r, c, std::move(v));
}

Mlp identity_mlp() {
  Mlp m = mlp_init(2, {}, 2, Activation::identity, false, 3);
  m.layers[0].weight.mutable_values() = {1, 0, 0, 1};
  return m;
}

double norm2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST(Mlp, IdentityForwardReturnsInput) {
  const Mlp m = identity_mlp();
  const Tensor y = forward(m, Tensor::row({1.5, -2.0}));
  EXPECT_EQ(y(0, 0), 1.5);
  EXPECT_EQ(y(0, 1), -2.0);
}

TEST(Mlp, InitIsDeterministicInSeed) {
  const Mlp a = mlp_init(3, {8, 4}, 2, Activation::tanh, true, 11);
  const Mlp b = mlp_init(3, {8, 4}, 2, Activation::tanh, true, 11);
  const Mlp c = mlp_init(3, {8, 4}, 2, Activation::tanh, true, 12);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_TRUE(std::equal(pa[i].values().begin(), pa[i].values().end(), pb[i].values().begin()));
    differs = differs || !std::equal(pa[i].values().begin(), pa[i].values().end(), pc[i].values().begin());
  }
  EXPECT_TRUE(differs);
}

TEST(Mlp, GlorotRangeAndZeroBias) {
  const Mlp m = mlp_init(10, {6}, 4, Activation::relu, false, 1);
  const double limit0 = std::sqrt(6.0 / 16.0), limit1 = std::sqrt(6.0 / 10.0);
  for (double w : m.layers[0].weight.values()) EXPECT_LE(std::fabs(w), limit0);
  for (double w : m.layers[1].weight.values()) EXPECT_LE(std::fabs(w), limit1);
  for (const auto& l : m.layers) {
    for (double b : l.bias.values()) EXPECT_EQ(b, 0.0);
  }
}

TEST(Mlp, FinalTanhBoundsOutputs) {
  const Mlp m = mlp_init(3, {16}, 1, Activation::tanh, true, 7);
  const Tensor y = forward(m, random_tensor(100, 3, 5, -50.0, 50.0));
  for (double v : y.values()) {
    EXPECT_GT(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Mlp, SingleTanhLayerScalar) {
  Mlp m = mlp_init(1, {}, 1, Activation::identity, true, 0);
  m.layers[0].weight.mutable_values() = {1.0};
  EXPECT_EQ(forward(m, Tensor::scalar(0.0)).item(), 0.0);
  EXPECT_NEAR(forward(m, Tensor::scalar(1.0)).item(), 0.761594, 1e-6);
}

TEST(Mlp, RejectsBadDimensions) {
  EXPECT_THROW(mlp_init(0, {}, 2, Activation::relu, false, 0), ValidationError);
  EXPECT_THROW(mlp_init(2, {0}, 2, Activation::relu, false, 0), ValidationError);
  EXPECT_NO_THROW(mlp_init(2, {}, 2, Activation::relu, false, 0));
  const Mlp m = mlp_init(2, {}, 2, Activation::relu, false, 0);
  EXPECT_THROW(forward(m, Tensor::row({1.0, 2.0, 3.0})), ShapeError);
}

TEST(Mlp, EvalForwardIsBitIdentical) {
  const Mlp m = mlp_init(4, {8}, 3, Activation::relu, false, 2, 0.5);
  const Tensor x = random_tensor(5, 4, 9);
  const Tensor a = forward(m, x, Mode::eval, 1);
  const Tensor b = forward(m, x, Mode::eval, 2);
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}

TEST(Mlp, DropoutDeterministicAndUnbiasedRate) {
  const double rate = 0.1;
  const Tensor m1 = dropout_mask(100, 100, rate, 42);
  const Tensor m2 = dropout_mask(100, 100, rate, 42);
  EXPECT_TRUE(std::equal(m1.values().begin(), m1.values().end(), m2.values().begin()));
  double dropped = 0.0;
  for (double v : m1.values()) dropped += v == 0.0;
  const double n = 1e4, frac = dropped / n;
  EXPECT_LE(std::fabs(frac - rate), 3.0 * std::sqrt(rate * (1 - rate) / n));

  // Train mode with a fixed seed is reproducible.
  const Mlp mlp = mlp_init(4, {32}, 2, Activation::relu, false, 5, 0.5);
  const Tensor x = random_tensor(8, 4, 1);
  const Tensor a = forward(mlp, x, Mode::train, 77);
  const Tensor b = forward(mlp, x, Mode::train, 77);
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}

TEST(Backward, SquareSum) {
  Tensor x = Tensor::parameter(1, 1, {3.0});
  const Gradients g = backward(sum(x * x));
  EXPECT_DOUBLE_EQ(g.of(x)[0], 6.0);
}

TEST(Backward, ConstantLossGivesZeroGrads) {
  const Mlp m = mlp_init(2, {3}, 1, Activation::tanh, false, 1);
  const Gradients g = backward(Tensor::scalar(2.5));
  for (const auto& p : m.parameters()) {
    for (double v : g.of(p)) EXPECT_EQ(v, 0.0);
  }
}

TEST(Backward, RejectsNonScalar) {
  Tensor x = Tensor::parameter(1, 2, {1.0, 2.0});
  EXPECT_THROW(backward(x * 2.0), ShapeError);
}

TEST(Backward, TanhMlpMatchesFiniteDifferences) {
  const Mlp m = mlp_init(3, {8}, 2, Activation::tanh, false, 21);
  const Tensor x = random_tensor(6, 3, 4);
  const double err = grad_check_parameters([&] { return mean(square(forward(m, x))); }, m.parameters(), 1e-5);
  EXPECT_LT(err, 1e-5);
}

// Every composite the library differentiates, checked on random inputs.
TEST(Backward, CompositesMatchFiniteDifferences) {
  const Tensor w = random_tensor(3, 4, 1), b = random_tensor(1, 3, 2), other = random_tensor(5, 4, 3);
  const std::vector<std::pair<std::string, std::function<Tensor(const Tensor&)>>> cases = {
      {"affine", [&](const Tensor& x) { return sum(linear(x, w, b)); }},
      {"tanh", [](const Tensor& x) { return sum(tanh(x * 1.3)); }},
      {"sigmoid", [](const Tensor& x) { return sum(sigmoid(x)); }},
      {"relu", [&](const Tensor& x) { return sum(relu(x) * other); }},
      {"mul_add", [&](const Tensor& x) { return sum(x * other + x * x); }},
      {"exp", [](const Tensor& x) { return mean(exp(x)); }},
      {"log", [](const Tensor& x) { return sum(log(x * x + 1.0)); }},
      {"div", [&](const Tensor& x) { return sum(x / (other * other + 1.0)); }},
      {"softplus_sqrt", [](const Tensor& x) { return sum(nsde::sqrt(softplus(x))); }},
      {"abs_cube", [](const Tensor& x) { return sum(abs_cube(x)); }},
      {"broadcast_row", [&](const Tensor& x) { return sum(x * slice_cols(other, 0, 4) + Tensor::row({1, 2, 3, 4})); }},
      {"concat_slice", [&](const Tensor& x) { return sum(square(slice_cols(concat_cols({x, other}), 2, 6))); }},
      {"batched_matvec",
       [&](const Tensor& x) { return sum(batched_matvec(concat_cols({x, x}), slice_cols(other, 0, 4), 2)); }},
      {"softmax_ce", [](const Tensor& x) { return softmax_cross_entropy(x, {0, 3, 1, 2, 3}); }},
  };
  for (const auto& [name, f] : cases) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const Tensor x = random_tensor(5, 4, 100 + seed);
      EXPECT_LT(grad_check(f, x, 1e-5), 1e-5) << name << " seed " << seed;
    }
  }
}

TEST(Backward, RowBroadcastGradientAccumulates) {
  Tensor r = Tensor::parameter(1, 2, {1.0, 2.0});
  const Tensor m = Tensor::from(3, 2, {1, 1, 1, 1, 1, 1});
  const Gradients g = backward(sum(r * m));
  EXPECT_EQ(g.of(r), (std::vector<double>{3.0, 3.0}));
}

TEST(Backward, LongChainTeardownDoesNotOverflow) {
  Tensor x = Tensor::parameter(1, 1, {1.0});
  Tensor y = x;
  for (int i = 0; i < 200000; ++i) y = y * 1.0;
  EXPECT_EQ(backward(sum(y)).of(x)[0], 1.0);
}

TEST(GradCheck, SumIsExact) {
  EXPECT_LT(grad_check([](const Tensor& x) { return sum(x); }, random_tensor(3, 3, 8), 1e-5), 1e-10);
}

TEST(GradCheck, ComposedTanhMlp) {
  const Mlp m = mlp_init(4, {6}, 3, Activation::tanh, true, 3);
  auto f = [&](const Tensor& x) { return mean(square(forward(m, x))); };
  EXPECT_LT(grad_check(f, random_tensor(4, 4, 6), 1e-5), 1e-5);
}

TEST(GradCheck, ReportsCorruptedGradient) {
  auto f = [](const Tensor& x) { return sum(tanh(x)); };
  const double err = grad_check(f, random_tensor(2, 3, 1), 1e-5, [](std::vector<double>& g) {
    for (double& v : g) v *= 2.0;
  });
  EXPECT_NEAR(err, 0.5, 1e-6);
}

TEST(Adam, ZeroGradientsLeaveParametersUnchanged) {
  Tensor p = Tensor::parameter(1, 2, {0.3, -0.7});
  std::vector<ParamGroup> groups{{"base", {p}, 1.0}};
  Gradients g;
  g.map()[p.id()] = {0.0, 0.0};
  AdamState st;
  adam_step(groups, g, st);
  EXPECT_EQ(p.values()[0], 0.3);
  EXPECT_EQ(p.values()[1], -0.7);
  EXPECT_EQ(st.step, 1);
  adam_step(groups, g, st);
  EXPECT_EQ(st.step, 2);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p = Tensor::parameter(1, 1, {1.0});
  std::vector<ParamGroup> groups{{"base", {p}, 1.0}};
  Gradients g;
  g.map()[p.id()] = {1.0};
  AdamState st;
  st.lr = 0.1;
  adam_step(groups, g, st);
  // |delta| = lr * g / (|g| + eps)
  EXPECT_NEAR(1.0 - p.values()[0], 0.1 / (1.0 + 1e-8), 1e-12);
}

TEST(Adam, GroupMultiplierScalesStep) {
  Tensor a = Tensor::parameter(1, 1, {0.0});
  Tensor b = Tensor::parameter(1, 1, {0.0});
  std::vector<ParamGroup> groups{{"base", {a}, 1.0}, {"readout_final", {b}, 100.0}};
  Gradients g;
  g.map()[a.id()] = {1.0};
  g.map()[b.id()] = {1.0};
  AdamState st;
  st.lr = 1e-4;
  adam_step(groups, g, st);
  EXPECT_NEAR(b.values()[0] / a.values()[0], 100.0, 1e-9);
}

TEST(Adam, NonFiniteGradientAborts) {
  Tensor p = Tensor::parameter(1, 1, {1.0});
  std::vector<ParamGroup> groups{{"base", {p}, 1.0}};
  Gradients g;
  g.map()[p.id()] = {std::numeric_limits<double>::quiet_NaN()};
  AdamState st;
  EXPECT_THROW(adam_step(groups, g, st), AbortNonFinite);
  EXPECT_EQ(p.values()[0], 1.0);
}

TEST(Adam, ClipGlobalNorm) {
  Tensor p = Tensor::parameter(1, 2, {0.0, 0.0});
  std::vector<ParamGroup> groups{{"base", {p}, 1.0}};
  Gradients g;
  g.map()[p.id()] = {30.0, 40.0};
  EXPECT_DOUBLE_EQ(clip_grad_norm(groups, g, 10.0), 50.0);
  EXPECT_NEAR(g.of(p)[0], 6.0, 1e-12);
  EXPECT_NEAR(g.of(p)[1], 8.0, 1e-12);
}

TEST(Lipschitz, IdentityAndDiagonal) {
  EXPECT_NEAR(lipschitz_upper_bound(identity_mlp()), 1.0, 1e-5);
  Mlp m = mlp_init(2, {}, 2, Activation::identity, false, 0);
  m.layers[0].weight.mutable_values() = {2, 0, 0, 3};
  m.layers[0].activation = Activation::relu;
  EXPECT_NEAR(lipschitz_upper_bound(m), 3.0, 1e-5);
}

TEST(Lipschitz, BoundHoldsOnSampledPairs) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Mlp m = mlp_init(5, {16, 16}, 3, seed % 2 ? Activation::tanh : Activation::sigmoid, seed % 2 == 0, seed);
    const double bound = lipschitz_upper_bound(m);
    const Tensor a = random_tensor(1000, 5, 10 + seed, -3, 3);
    const Tensor b = random_tensor(1000, 5, 20 + seed, -3, 3);
    const Tensor fa = forward(m, a), fb = forward(m, b);
    for (std::size_t i = 0; i < 1000; ++i) {
      const double dy = norm2(fa.values().subspan(i * 3, 3), fb.values().subspan(i * 3, 3));
      const double dx = norm2(a.values().subspan(i * 5, 5), b.values().subspan(i * 5, 5));
      ASSERT_LE(dy, bound * dx);
    }
  }
}
