#include <gtest/gtest.h>

#include <cmath>

#include "stsc/autograd.hpp"
#include "stsc/runtime.hpp"
#include "support.hpp"

using namespace stsc;
using testing_support::naive_conv;
using testing_support::random_tensor;

namespace {

Tensor t4(Shape s, std::vector<double> v) { return Tensor(s, std::move(v)); }

std::vector<double> values(const Var& v) { return v.value().values(); }

}  // namespace

TEST(Tensor, StorageInvariants) {
  Tensor t({2, 3, 4, 5});
  EXPECT_EQ(t.numel(), 120);
  EXPECT_EQ(t.values().size(), 120u);
  EXPECT_THROW(Tensor({1, 1, 2, 2}, {1.0, 2.0}), DimensionError);
  t.at(1, 2, 3, 4) = 7.0;
  EXPECT_EQ(t[119], 7.0);
}

TEST(Tensor, SinglePrecisionRoundsOnConstruction) {
  Tensor t({1, 1, 1, 1}, {0.1}, Precision::f32);
  EXPECT_EQ(t[0], static_cast<double>(0.1f));
  EXPECT_TRUE(bit_equal(t.to(Precision::f64).to(Precision::f32), t));
}

TEST(Conv2d, HandComputedExample) {
  Var x(t4({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  Var w(t4({1, 1, 2, 2}, {1, 0, 0, 1}));
  Var b(Tensor({1, 1, 1, 1}));
  const Var y = conv2d(x, w, b, 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(values(y), (std::vector<double>{6, 8, 12, 14}));
}

TEST(Conv2d, IdentityKernel) {
  std::mt19937_64 rng(1);
  Var x(random_tensor({2, 1, 5, 4}, rng));
  const Var y = conv2d(x, Var(t4({1, 1, 1, 1}, {1})), Var(Tensor({1, 1, 1, 1})), 1, 0);
  EXPECT_TRUE(bit_equal(y.value(), x.value()));
}

TEST(Conv2d, StrideTwoPadOneMatchesNaive) {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({1, 4, 8, 8}, rng);
  const Tensor w = random_tensor({3, 4, 3, 3}, rng);
  const Tensor b = random_tensor({3, 1, 1, 1}, rng);
  const Var y = conv2d(Var(x), Var(w), Var(b), 2, 1);
  EXPECT_LE(max_abs_diff(y.value(), naive_conv(x, w, b, 2, 1)), 1e-12);
}

TEST(Conv2d, RandomConfigsSinglePrecisionMatchNaive) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> kd(0, 3), sd(1, 2), cd(1, 5), hd(3, 12), nd(1, 2);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 * kd(rng) + 1;
    const int stride = sd(rng);
    const int pad = std::uniform_int_distribution<int>(0, k / 2)(rng);
    const std::int64_t h = std::max<std::int64_t>(hd(rng), k - 2 * pad);
    const std::int64_t w = std::max<std::int64_t>(hd(rng), k - 2 * pad);
    const Tensor x = random_tensor({nd(rng), cd(rng), h, w}, rng, -1, 1, Precision::f32);
    const Tensor wt = random_tensor({cd(rng), x.shape().c, k, k}, rng, -1, 1, Precision::f32);
    const Tensor b = random_tensor({wt.shape().n, 1, 1, 1}, rng, -1, 1, Precision::f32);
    const Var y = conv2d(Var(x), Var(wt), Var(b), stride, pad);
    ASSERT_LE(max_abs_diff(y.value(), naive_conv(x, wt, b, stride, pad)), 1e-5)
        << "trial " << trial << " k=" << k << " s=" << stride << " p=" << pad;
  }
}

TEST(Conv2d, Errors) {
  Var x(Tensor({1, 2, 4, 4}));
  EXPECT_THROW(conv2d(x, Var(Tensor({1, 3, 3, 3})), Var(Tensor({1, 1, 1, 1})), 1, 1), DimensionError);
  EXPECT_THROW(conv2d(x, Var(Tensor({1, 2, 7, 7})), Var(Tensor({1, 1, 1, 1})), 1, 0), GeometryError);
}

TEST(Conv2d, ThreadCountDoesNotChangeBits) {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({4, 3, 9, 9}, rng, -1, 1, Precision::f32);
  const Tensor w = random_tensor({5, 3, 3, 3}, rng, -1, 1, Precision::f32);
  const Tensor b = random_tensor({5, 1, 1, 1}, rng, -1, 1, Precision::f32);
  auto run = [&] {
    Tape tape;
    Var xv = tape.input("x", x);
    Var wv = tape.input("w", w);
    Var bv = tape.input("b", b);
    const GradMap g = tape.backward(sum_all(square(conv2d(xv, wv, bv, 2, 1))));
    return std::vector<Tensor>{g.at("x"), g.at("w"), g.at("b")};
  };
  const int before = thread_count();
  set_thread_count(1);
  const auto serial = run();
  set_thread_count(3);
  const auto parallel = run();
  set_thread_count(before);
  for (std::size_t i = 0; i < serial.size(); ++i) EXPECT_TRUE(bit_equal(serial[i], parallel[i]));
}

TEST(Activation, Examples) {
  const Var r = relu(Var(t4({1, 3, 1, 1}, {-1, 0, 2})));
  EXPECT_EQ(values(r), (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(sigmoid(Var(Tensor::scalar(0.0))).value().item(), 0.5);
  Tape tape;
  Var x = tape.input("x", Tensor::scalar(0.0));
  EXPECT_NEAR(tape.backward(sigmoid(x)).at("x").item(), 0.25, 1e-15);
  auto f = [](const Tensor& t) { return sigmoid(Var(t)).value().item(); };
  EXPECT_NEAR(numeric_gradient(f, Tensor::scalar(0.0), 0, 1e-6), 0.25, 1e-6);
}

TEST(Resample, SpaceToDepthOrder) {
  const Var y = resample(Var(t4({1, 1, 2, 2}, {1, 2, 3, 4})), ResampleKind::space_to_depth_x2);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 1, 1}));
  EXPECT_EQ(values(y), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Resample, SpaceToDepthInverseIsBitExact) {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({2, 3, 6, 8}, rng);
  const Var s = resample(Var(x), ResampleKind::space_to_depth_x2);
  EXPECT_EQ(s.shape(), (Shape{2, 12, 3, 4}));
  EXPECT_TRUE(bit_equal(resample(s, ResampleKind::depth_to_space_x2).value(), x));
}

TEST(Resample, UpThenPoolIsIdentity) {
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({1, 2, 3, 5}, rng);
  const Var up = resample(Var(x), ResampleKind::nearest_up_x2);
  EXPECT_EQ(up.shape(), (Shape{1, 2, 6, 10}));
  EXPECT_TRUE(bit_equal(resample(up, ResampleKind::avg_pool_k2).value(), x));
}

TEST(Resample, AvgPoolExample) {
  EXPECT_EQ(resample(Var(t4({1, 1, 2, 2}, {1, 2, 3, 4})), ResampleKind::avg_pool_k2).value().item(), 2.5);
}

TEST(Resample, ToTargetSizes) {
  const Var x(t4({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}));
  const Var down = resample(x, ResampleKind::avg_pool_to, 1, 2);
  EXPECT_EQ(values(down), (std::vector<double>{3.5, 5.5}));
  const Var up = resample(x, ResampleKind::nearest_to, 4, 8);
  EXPECT_EQ(up.value().at(0, 0, 3, 7), 8);
  EXPECT_EQ(up.value().at(0, 0, 1, 2), 2);
  EXPECT_THROW(resample(x, ResampleKind::avg_pool_to, 1, 3), GeometryError);
  EXPECT_THROW(resample(Var(Tensor({1, 1, 3, 3})), ResampleKind::avg_pool_k2), GeometryError);
}

TEST(Resample, AdaptivePoolWindows) {
  // 5 -> 2 bins: [0,3) and [2,5)
  const Var x(t4({1, 1, 1, 5}, {1, 2, 3, 4, 5}));
  const Var y = resample(x, ResampleKind::adaptive_avg_pool, 1, 2);
  EXPECT_DOUBLE_EQ(y.value()[0], 2.0);
  EXPECT_DOUBLE_EQ(y.value()[1], 4.0);
  const Var z = resample(Var(Tensor::full({1, 2, 1, 1}, 3.0)), ResampleKind::adaptive_avg_pool, 4, 4);
  for (double v : z.value().data()) EXPECT_EQ(v, 3.0);
}

TEST(Resample, MaxPool) {
  const Var y = resample(Var(t4({1, 1, 2, 4}, {1, 5, 2, 2, 3, 4, 9, 2})), ResampleKind::max_pool_k2);
  EXPECT_EQ(values(y), (std::vector<double>{5, 9}));
}

TEST(Combine, Examples) {
  const Var cat = combine(Var(t4({1, 2, 1, 1}, {1, 2})), Var(t4({1, 1, 1, 1}, {3})),
                          CombineKind::concat_channels);
  EXPECT_EQ(values(cat), (std::vector<double>{1, 2, 3}));
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor({2, 3, 4, 4}, rng);
  EXPECT_TRUE(bit_equal(combine(Var(x), Var(Tensor::full({2, 3, 1, 1}, 1.0)), CombineKind::elementwise_mul).value(), x));
  const Var m = combine(Var(t4({1, 1, 1, 2}, {2, 4})), Var(t4({1, 1, 1, 1}, {0.5})),
                        CombineKind::elementwise_mul);
  EXPECT_EQ(values(m), (std::vector<double>{1, 2}));
  EXPECT_THROW(combine(Var(Tensor({1, 1, 2, 2})), Var(Tensor({1, 1, 3, 3})), CombineKind::concat_channels),
               DimensionError);
  EXPECT_THROW(combine(Var(Tensor({1, 2, 2, 2})), Var(Tensor({1, 3, 1, 1})), CombineKind::add), DimensionError);
}

TEST(GlobalAvgPool, Examples) {
  EXPECT_EQ(global_avg_pool(Var(t4({1, 1, 2, 2}, {1, 2, 3, 4}))).value().item(), 2.5);
  EXPECT_DOUBLE_EQ(global_avg_pool(Var(Tensor::full({1, 1, 3, 3}, 0.7))).value().item(), 0.7);
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({1, 1, 3, 7}, rng);
  double s = 0;
  for (double v : x.data()) s += v;
  EXPECT_NEAR(global_avg_pool(Var(x)).value().item(), s / 21.0, 1e-6);
}

TEST(Backward, SumOfSquares) {
  Tape tape;
  Var x = tape.input("x", t4({1, 3, 1, 1}, {1, -2, 3}));
  const GradMap g = tape.backward(sum_all(square(x)));
  EXPECT_EQ(g.at("x").values(), (std::vector<double>{2, -4, 6}));
}

TEST(Backward, IdentityConvGivesOnes) {
  Tape tape;
  std::mt19937_64 rng(9);
  Var x = tape.input("x", random_tensor({1, 1, 4, 4}, rng));
  const GradMap g = tape.backward(sum_all(conv2d(x, Var(t4({1, 1, 1, 1}, {1})), Var(Tensor({1, 1, 1, 1})), 1, 0)));
  for (double v : g.at("x").data()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, FanOutAccumulates) {
  Tape tape;
  Var x = tape.input("x", t4({1, 2, 1, 1}, {1.5, -0.5}));
  // loss = sum(x*x + 3x) -> 2x + 3
  const GradMap g = tape.backward(sum_all(add(mul(x, x), scale(x, 3.0))));
  EXPECT_EQ(g.at("x").values(), (std::vector<double>{6.0, 2.0}));
  EXPECT_EQ(tape.last_backward_visits(), tape.size());
}

TEST(Backward, UnreachedLeafGetsZeros) {
  Tape tape;
  Var x = tape.input("x", Tensor::scalar(2.0));
  Var unused = tape.input("u", Tensor({1, 2, 1, 1}));
  const GradMap g = tape.backward(square(x));
  EXPECT_EQ(g.at("u").shape(), (Shape{1, 2, 1, 1}));
  EXPECT_EQ(g.at("u").values(), (std::vector<double>{0, 0}));
}

TEST(Backward, Errors) {
  Tape tape;
  Var x = tape.input("x", Tensor({1, 2, 1, 1}));
  EXPECT_THROW(tape.backward(x), RankError);
  EXPECT_THROW(tape.backward(Var(Tensor::scalar(1.0))), DetachedNodeError);
  Tape other;
  Var y = other.input("y", Tensor::scalar(1.0));
  EXPECT_THROW(tape.backward(square(y)), DetachedNodeError);
}

TEST(Backward, TopologicalOrder) {
  Tape tape;
  Var x = tape.input("x", Tensor::full({1, 1, 2, 2}, 0.3));
  Var y = relu(scale(x, 2.0));
  Var z = mean_all(mul(y, x));
  (void)z;
  for (std::size_t id = 0; id < tape.size(); ++id) {
    for (NodeId p : tape.parents(static_cast<NodeId>(id))) EXPECT_LT(p, static_cast<NodeId>(id));
  }
}

TEST(NumericGradient, Examples) {
  auto sq = [](const Tensor& t) {
    double s = 0;
    for (double v : t.data()) s += v * v;
    return s;
  };
  EXPECT_NEAR(numeric_gradient(sq, Tensor::full({1, 1, 1, 1}, 3.0), 0, 1e-6), 6.0, 1e-4);
  auto lin = [](const Tensor& t) { return 4.0 * t[0] - 1.0; };
  EXPECT_NEAR(numeric_gradient(lin, Tensor::scalar(0.25), 0, 1e-3), 4.0, 1e-9);
  EXPECT_NEAR(numeric_gradient(lin, Tensor::scalar(0.25), 0, 1e-6), 4.0, 1e-9);
  EXPECT_THROW(numeric_gradient(lin, Tensor::scalar(0.0), 1, 1e-6), IndexError);
}

TEST(Ops, Determinism) {
  std::mt19937_64 rng(10);
  const Tensor x = random_tensor({2, 4, 8, 8}, rng);
  auto run = [&] {
    return sigmoid(resample(relu(Var(x)), ResampleKind::avg_pool_k2)).value();
  };
  EXPECT_TRUE(bit_equal(run(), run()));
}

TEST(Ops, FiniteInFiniteOut) {
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor({1, 2, 4, 4}, rng, -50, 50);
  EXPECT_TRUE(sigmoid(Var(x)).value().all_finite());
  EXPECT_TRUE(sigmoid(Var(Tensor::full({1, 1, 1, 1}, -800.0))).value().all_finite());
}
