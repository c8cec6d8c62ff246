#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "svq/array.hpp"
#include "svq/autodiff.hpp"
#include "svq/gradcheck.hpp"
#include "svq/nn.hpp"
#include "svq/rng.hpp"
#include "svq/util.hpp"
#include "svq/verify.hpp"

using namespace svq;

namespace {

Array random_array(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Array a(std::move(s));
  for (auto& v : a.data()) v = rng.uniform(lo, hi);
  return a;
}

}  // namespace

TEST(Array, ShapeAndDataAgree) {
  Array a(Shape{2, 3}, 1.5);
  EXPECT_EQ(a.size(), 6u);
  EXPECT_EQ(a.rows(), 2u);
  EXPECT_EQ(a.cols(), 3u);
  EXPECT_THROW(Array(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_DOUBLE_EQ(Array::scalar(4.0).item(), 4.0);
  EXPECT_THROW(a.item(), ShapeError);
}

TEST(Array, ReshapeKeepsDataAndRejectsSizeChange) {
  const Array a = Array::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  const Array b = a.reshaped(Shape{3, 2});
  EXPECT_EQ(b(2, 1), 6.0);
  EXPECT_THROW(a.reshaped(Shape{4}), ShapeError);
}

TEST(Array, BitwiseEqualDistinguishesSignedZero) {
  EXPECT_TRUE(bitwise_equal(Array::vector({0.0, 1.0}), Array::vector({0.0, 1.0})));
  EXPECT_FALSE(bitwise_equal(Array::vector({0.0}), Array::vector({-0.0})));
}

TEST(Ops, SoftmaxOfEqualLogitsIsUniform) {
  Tape t;
  const Array y = softmax(t.constant(Array::vector({0.0, 0.0}))).value();
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(Ops, MatmulByIdentity) {
  Tape t;
  const Array a = random_array({2, 2}, 1);
  const Array out = matmul(t.constant(Array::matrix(2, 2, {1, 0, 0, 1})), t.constant(a)).value();
  EXPECT_TRUE(bitwise_equal(out, a));
}

TEST(Ops, LayerNormHandValue) {
  Tape t;
  const Array y = layer_norm(t.constant(Array::matrix(1, 2, {1, 3})), t.constant(Array::vector({1, 1})),
                             t.constant(Array::vector({0, 0})))
                      .value();
  // (x - 2) / sqrt(1 + 1e-5)
  EXPECT_NEAR(y[0], -1.0 / std::sqrt(1.0 + 1e-5), 1e-12);
  EXPECT_NEAR(y[1], 1.0 / std::sqrt(1.0 + 1e-5), 1e-12);
}

TEST(Ops, ShapeMismatchNamesShapes) {
  Tape t;
  try {
    matmul(t.constant(Array(Shape{2, 3})), t.constant(Array(Shape{2, 3})));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos) << e.what();
  }
  EXPECT_THROW(add(t.constant(Array(Shape{2})), t.constant(Array(Shape{3}))), ShapeError);
}

TEST(Ops, LogRejectsNonPositive) {
  Tape t;
  EXPECT_THROW(log(t.constant(Array::vector({1.0, 0.0}))), std::domain_error);
}

TEST(Ops, ForwardStaysFiniteOnExtremeInputs) {
  Tape t;
  const Var x = t.constant(Array::vector({-800.0, 0.0, 800.0}));
  EXPECT_TRUE(sigmoid(x).value().all_finite());
  EXPECT_TRUE(softplus(x).value().all_finite());
  EXPECT_TRUE(softmax(x).value().all_finite());
  EXPECT_TRUE(log_softmax(x).value().all_finite());
  EXPECT_TRUE(gelu(x).value().all_finite());
}

TEST(Ops, AttentionSegmentsIsolateTokens) {
  // With one token per segment, each token attends only to itself: out == v.
  Tape t;
  const Array q = random_array({3, 4}, 2), k = random_array({3, 4}, 3), v = random_array({3, 4}, 4);
  const Array out = attention(t.constant(q), t.constant(k), t.constant(v), 2, {0, 1, 2}).value();
  EXPECT_LT(max_abs_diff(out, v), 1e-15);
}

TEST(Backward, SumGivesOnes) {
  Tape t;
  const Var p = t.parameter(random_array({2, 3}, 5));
  t.backward(sum(p));
  {
    const Array g_p = t.grad(p);
    for (double g : g_p.data()) EXPECT_EQ(g, 1.0); }
}

TEST(Backward, HalfSumOfSquaresGivesP) {
  // mean(p^2) * |p| / 2 over p = [1, 2] -> grad = p.
  Tape t;
  const Var p = t.parameter(Array::vector({1.0, 2.0}));
  t.backward(scale(mean_all(mul(p, p)), 1.0));
  const Array g = t.grad(p);
  EXPECT_DOUBLE_EQ(g[0], 1.0);
  EXPECT_DOUBLE_EQ(g[1], 2.0);
}

TEST(Backward, UnreachableParameterGetsExactZero) {
  Tape t;
  const Var p = t.parameter(random_array({3}, 6));
  const Var q = t.parameter(random_array({3}, 7));
  t.backward(sum(q));
  {
    const Array g_p = t.grad(p);
    for (double g : g_p.data()) EXPECT_EQ(g, 0.0); }
  EXPECT_EQ(t.grad(p).shape(), p.shape());
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape t;
  const Var p = t.parameter(random_array({3}, 8));
  EXPECT_THROW(t.backward(p), ShapeError);
}

TEST(Backward, LinearInLossScaleExactly) {
  const Array x = random_array({3, 4}, 9);
  const Array w = random_array({4, 2}, 10);
  const auto grad_for = [&](double a) {
    Tape t;
    const Var p = t.parameter(x);
    t.backward(scale(sum(gelu(matmul(p, t.constant(w)))), a));
    return t.grad(p);
  };
  const Array base = grad_for(1.0);
  for (double a : {2.0, 0.5, -4.0, 0.125}) {
    const Array scaled = grad_for(a);
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_EQ(scaled[i], a * base[i]);
  }
}

TEST(Backward, SeedScalesGradient) {
  Tape t;
  const Var p = t.parameter(random_array({4}, 11));
  const Var loss = sum(mul(p, p));
  t.backward(loss, 3.0);
  const Array g = t.grad(p);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(g[i], 6.0 * p.value()[i]);
}

TEST(Backward, DeterministicBitwise) {
  const auto run = [] {
    Tape t;
    const Var p = t.parameter(random_array({4, 4}, 12));
    const Var y = attention(p, p, p, 2);
    t.backward(sum(mul(y, y)));
    return std::make_pair(y.value(), t.grad(p));
  };
  const auto a = run(), b = run();
  EXPECT_TRUE(bitwise_equal(a.first, b.first));
  EXPECT_TRUE(bitwise_equal(a.second, b.second));
}

TEST(GradCheck, SumPasses) {
  const auto r = finite_difference_check([](Tape&, const Var& p) { return sum(p); }, random_array({5}, 13));
  EXPECT_TRUE(r.pass);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, ThreeWayCrossEntropyPasses) {
  const std::vector<std::size_t> target{2};
  const auto r = finite_difference_check([&](Tape&, const Var& p) { return cross_entropy(p, target); },
                                         random_array({1, 3}, 14, -2, 2), 1e-5, 1e-4);
  EXPECT_TRUE(r.pass) << r.failure;
}

TEST(GradCheck, WrongBackwardFails) {
  const OpCase faulty = faulty_op_case();
  Rng rng(15);
  const auto r = finite_difference_check(faulty.f, faulty.sample(rng));
  EXPECT_FALSE(r.pass);
  EXPECT_GT(r.max_rel_error, 0.1);
}

TEST(GradCheck, NanGradientFailsWithLocation) {
  const auto nan_op = [](Tape& t, const Var& p) {
    const std::size_t ip = p.id();
    const Var y = t.record(Array::scalar(p.value()[0]), {p}, [ip](Tape& tape, std::size_t) {
      tape.grad_slot(ip)[1] = std::nan("");
    });
    return y;
  };
  const auto r = finite_difference_check(nan_op, Array::vector({1.0, 2.0}));
  EXPECT_FALSE(r.pass);
  EXPECT_NE(r.failure.find("1"), std::string::npos) << r.failure;
}

TEST(GradCheck, EveryOpPassesAtTenPoints) {
  for (const auto& op : op_cases()) {
    const CheckResult r = check_op_gradient(op, 99);
    EXPECT_TRUE(r.pass) << r.name << ": " << r.detail;
  }
}

TEST(Rng, DeterministicAndSeedSensitive) {
  Rng a(1), b(1), c(2);
  for (int i = 0; i < 5; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    EXPECT_NE(x, c.next());
  }
  EXPECT_NE(derive_seed(7, {1, 2}), derive_seed(7, {2, 1}));
  EXPECT_EQ(derive_seed(7, {1, 2}), derive_seed(7, {1, 2}));
}

TEST(Rng, BelowIsInRangeAndRoughlyUniform) {
  Rng r(3);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) {
    const auto v = r.below(5);
    ASSERT_LT(v, 5u);
    ++counts[v];
  }
  for (int c : counts) EXPECT_NEAR(c / 50000.0, 0.2, 0.01);
}

TEST(Rng, NormalMoments) {
  Rng r(4);
  double s = 0, s2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Util, CeilCountToleratesRoundOff) {
  EXPECT_EQ(ceil_count(0.4, 64), 26u);
  EXPECT_EQ(ceil_count(0.15, 12), 2u);
  EXPECT_EQ(ceil_count(0.3, 10), 3u);  // 0.3 * 10 = 3.0000000000000004
  EXPECT_EQ(ceil_count(0.0, 10), 0u);
}

TEST(Util, Base64RoundTrip) {
  const std::vector<std::uint8_t> bytes{0, 1, 2, 250, 251, 252, 253, 254, 255};
  for (std::size_t n = 0; n <= bytes.size(); ++n) {
    const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<long>(n));
    EXPECT_EQ(base64_decode(base64_encode(part)), part);
  }
  EXPECT_EQ(base64_encode({'M', 'a', 'n'}), "TWFu");
}

TEST(Util, DoubleTextRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) {
    EXPECT_EQ(parse_double(format_double(v)), v);
  }
}

TEST(AdamW, ZeroLearningRateLeavesParametersUntouched) {
  ParamStore store;
  store.add("w", random_array({3, 3}, 16));
  store.add("b", random_array({3}, 17));
  const ParamStore before = store;
  AdamWConfig cfg;
  cfg.lr = 0.0;
  AdamW opt(cfg, store);
  opt.step(store, {random_array({3, 3}, 18), random_array({3}, 19)});
  EXPECT_TRUE(store == before);
}

TEST(AdamW, InactiveParametersAreSkipped) {
  ParamStore store;
  store.add("w", Array(Shape{2, 2}, 1.0));
  store.add("v", Array(Shape{2, 2}, 1.0));
  AdamWConfig cfg;
  cfg.weight_decay = 0.5;
  AdamW opt(cfg, store);
  const std::vector<bool> active{true, false};
  opt.step(store, {Array(Shape{2, 2}, 1.0), Array(Shape{2, 2}, 1.0)}, &active);
  EXPECT_LT(store.get("w")[0], 1.0);
  EXPECT_TRUE(bitwise_equal(store.get("v"), Array(Shape{2, 2}, 1.0)));
  EXPECT_EQ(opt.first_moments()[1][0], 0.0);
  const std::vector<bool> wrong{true};
  EXPECT_THROW(opt.step(store, {Array(Shape{2, 2}), Array(Shape{2, 2})}, &wrong), std::invalid_argument);
}

TEST(AdamW, DecaysMatricesOnly) {
  ParamStore store;
  store.add("w", Array(Shape{2, 2}, 1.0));
  store.add("b", Array(Shape{2}, 1.0));
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  AdamW opt(cfg, store);
  opt.step(store, {Array(Shape{2, 2}), Array(Shape{2})});
  EXPECT_DOUBLE_EQ(store.get("w")[0], 1.0 - 0.1 * 0.5);
  EXPECT_DOUBLE_EQ(store.get("b")[0], 1.0);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  ParamStore store;
  store.add("b", Array::vector({0.0, 0.0}));
  AdamWConfig cfg;
  cfg.lr = 0.01;
  AdamW opt(cfg, store);
  opt.step(store, {Array::vector({3.0, -0.5})});
  EXPECT_NEAR(store.get("b")[0], -0.01, 1e-9);
  EXPECT_NEAR(store.get("b")[1], 0.01, 1e-9);
}
