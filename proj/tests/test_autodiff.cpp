#include <gtest/gtest.h>

#include <cmath>

#include "metacl/autodiff.hpp"
#include "oracles.hpp"

using namespace metacl;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(Record, AddIsElementwise) {
  Tape tape;
  auto x = tape.variable({2}, {1, 2});
  auto y = tape.variable({2}, {3, 4});
  EXPECT_EQ(vals(record("add", {x, y})), (std::vector<double>{4, 6}));
}

TEST(Record, ReluClampsNegatives) {
  Tape tape;
  auto x = tape.variable({3}, {-1, 0, 2});
  EXPECT_EQ(vals(record(OpKind::Relu, {x})), (std::vector<double>{0, 0, 2}));
}

TEST(Record, MatmulDotProduct) {
  Tape tape;
  auto a = tape.variable({1, 2}, {1, 2});
  auto b = tape.variable({2, 1}, {3, 4});
  const auto c = record("matmul", {a, b});
  EXPECT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_EQ(c.item(), 11.0);
}

TEST(Record, ShapeMismatchThrows) {
  Tape tape;
  auto a = tape.variable({2}, {1, 2});
  auto b = tape.variable({3}, {1, 2, 3});
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(matmul(tape.variable({2, 3}, std::vector<double>(6)), tape.variable({2, 3}, std::vector<double>(6))),
               ShapeError);
}

TEST(Record, UnknownKindThrows) {
  Tape tape;
  auto a = tape.variable({1}, {1});
  EXPECT_THROW(record("convolution", {a}), std::invalid_argument);
  EXPECT_EQ(parse_op_kind("index"), OpKind::Slice);
}

TEST(Record, NonFiniteValueIsNumericError) {
  Tape tape;
  EXPECT_THROW(log(tape.variable({1}, {0.0})), NumericError);
  EXPECT_THROW(reciprocal(tape.variable({1}, {0.0})), NumericError);
}

TEST(Record, MixedTapesRejected) {
  Tape t1, t2;
  auto a = t1.variable({1}, {1});
  auto b = t2.variable({1}, {2});
  EXPECT_THROW(add(a, b), std::invalid_argument);
}

TEST(Gradient, SquareSum) {
  Tape tape;
  auto x = tape.variable({2}, {3, -1});
  const auto g = gradient(sum(square(x)), std::vector<Tensor>{x});
  EXPECT_EQ(vals(g[0]), (std::vector<double>{6, -2}));
  EXPECT_TRUE(g[0].is_constant());
}

TEST(Gradient, SecondDerivativeOfSquare) {
  Tape tape;
  auto x = tape.variable({2}, {3, -1});
  const auto g = gradient(sum(square(x)), std::vector<Tensor>{x}, true);
  ASSERT_FALSE(g[0].is_constant());
  const auto gg = gradient(sum(g[0]), std::vector<Tensor>{x});
  EXPECT_EQ(vals(gg[0]), (std::vector<double>{2, 2}));
}

TEST(Gradient, ScalarMetaGradientClosedForm) {
  // Inner: W1 = W0 - a * d/dW 0.5(tW0-1)^2, outer 0.5(tW1-1)^2, at t=1, W0=0, a=0.5.
  auto outer = [](double theta, double w0, double alpha, bool differentiate) {
    Tape tape;
    auto t = tape.variable({1}, {theta});
    auto w = tape.variable({1}, {w0});
    auto one = Tensor::constant({1}, {1.0});
    auto inner = scale(sum(square(sub(mul(t, w), one))), 0.5);
    auto gw = gradient(inner, std::vector<Tensor>{w}, true);
    auto w1 = sgd_step(std::vector<Tensor>{w}, gw, alpha)[0];
    auto loss = scale(sum(square(sub(mul(t, w1), one))), 0.5);
    if (!differentiate) return loss.item();
    return gradient(loss, std::vector<Tensor>{t})[0].item();
  };
  EXPECT_NEAR(outer(1.0, 0.0, 0.5, true), -0.5, 1e-10);
  // Closed form (a t^2 - 1) * 2 a t and finite differences agree.
  const double a = 0.5, th = 1.0;
  EXPECT_NEAR(outer(th, 0.0, a, true), (a * th * th - 1.0) * 2.0 * a * th, 1e-12);
  const double fd = (outer(th + 1e-5, 0.0, a, false) - outer(th - 1e-5, 0.0, a, false)) / 2e-5;
  EXPECT_NEAR(fd, -0.5, 1e-8);
}

TEST(Gradient, UnreachableWrtGetsZeros) {
  Tape tape;
  auto x = tape.variable({2}, {1, 2});
  auto y = tape.variable({3}, {1, 2, 3});
  const auto g = gradient(sum(x), std::vector<Tensor>{y});
  EXPECT_EQ(vals(g[0]), (std::vector<double>{0, 0, 0}));
}

TEST(Gradient, NonScalarOutputThrows) {
  Tape tape;
  auto x = tape.variable({2}, {1, 2});
  EXPECT_THROW(gradient(square(x), std::vector<Tensor>{x}), ShapeError);
}

TEST(StopGradient, OnlyUndetachedFactorContributes) {
  Tape tape;
  auto x = tape.variable({1}, {2});
  EXPECT_EQ(gradient(sum(mul(stop_gradient(x), x)), std::vector<Tensor>{x})[0].item(), 2.0);
}

TEST(StopGradient, FullyDetachedIsExactlyZero) {
  Tape tape;
  auto x = tape.variable({1}, {2});
  EXPECT_EQ(gradient(sum(stop_gradient(x)), std::vector<Tensor>{x})[0].item(), 0.0);
  // Also exact zero through second-order graphs.
  auto g = gradient(sum(mul(square(x), stop_gradient(x))), std::vector<Tensor>{x}, true)[0];
  EXPECT_EQ(gradient(sum(stop_gradient(g)), std::vector<Tensor>{x})[0].item(), 0.0);
}

TEST(StopGradient, PreservesValues) {
  std::mt19937_64 rng(5);
  Tape tape;
  auto x = tape.variable({3, 4}, oracle::uniform(rng, 12, -3, 3));
  EXPECT_EQ(vals(stop_gradient(x)), vals(x));
}

TEST(SgdStep, Arithmetic) {
  Tape tape;
  auto p = tape.variable({1}, {1.0});
  auto g = Tensor::constant({1}, {-1.0});
  EXPECT_EQ(sgd_step(std::vector<Tensor>{p}, std::vector<Tensor>{g}, 0.5)[0].item(), 1.5);
  EXPECT_EQ(vals(sgd_step(std::vector<Tensor>{p}, std::vector<Tensor>{g}, 0.0)[0]), vals(p));
}

TEST(SgdStep, TwoChainedStepsOnHalfSquare) {
  Tape tape;
  Tensor w = tape.variable({1}, {1.0});
  for (int i = 0; i < 2; ++i) {
    const auto g = gradient(scale(sum(square(w)), 0.5), std::vector<Tensor>{w}, true);
    w = sgd_step(std::vector<Tensor>{w}, g, 0.1)[0];
  }
  EXPECT_NEAR(w.item(), 0.81, 1e-15);
}

TEST(SgdStep, RejectsBadArguments) {
  Tape tape;
  auto p = tape.variable({2}, {1, 2});
  EXPECT_THROW(sgd_step(std::vector<Tensor>{p}, std::vector<Tensor>{Tensor::zeros({3})}, 0.1), ShapeError);
  EXPECT_THROW(sgd_step(std::vector<Tensor>{p}, std::vector<Tensor>{Tensor::zeros({2})}, -0.1),
               std::invalid_argument);
}

TEST(Tape, ReplayReproducesValues) {
  Tape tape;
  auto x = tape.variable({2, 2}, {1, -2, 3, 0.5});
  auto w = tape.variable({2, 3}, {0.1, 0.2, 0.3, -0.4, 0.5, -0.6});
  cross_entropy(relu(matmul(x, w)), {0, 2});
  EXPECT_TRUE(tape.replay_matches());
  EXPECT_EQ(tape.replay().size(), tape.size());
}

TEST(Tape, TruncateInvalidatesLaterTensors) {
  Tape tape;
  auto x = tape.variable({1}, {2});
  const auto mark = tape.mark();
  auto y = square(x);
  tape.truncate(mark);
  EXPECT_EQ(tape.size(), mark);
  EXPECT_THROW(sum(y), std::logic_error);
  // Tensors recorded before the mark stay usable.
  EXPECT_EQ(gradient(sum(square(x)), std::vector<Tensor>{x})[0].item(), 4.0);
}

class OpKindFiniteDifference : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpKindFiniteDifference, FirstAndSecondOrderMatch) {
  const auto cases = oracle::op_kind_cases();
  const auto& c = cases.at(GetParam());
  std::size_t n = 0;
  for (const auto& s : c.leaf_shapes) n += shape_size(s);
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    std::mt19937_64 rng(1000 + trial);
    auto x = oracle::uniform(rng, n, c.lo, c.hi);
    if (c.name == "relu")
      for (auto& v : x) v = v < 0 ? v - 0.1 : v + 0.1;
    const auto r = oracle::check_graph(c.leaf_shapes, c.build, x, 77 + trial);
    ASSERT_FALSE(r.skipped) << c.name;
    EXPECT_LT(r.first, 1e-5) << c.name;
    EXPECT_LT(r.second, 1e-4) << c.name;
  }
}

INSTANTIATE_TEST_SUITE_P(AllKinds, OpKindFiniteDifference,
                         ::testing::Range<std::size_t>(0, oracle::op_kind_cases().size()),
                         [](const auto& info) {
                           std::string n = oracle::op_kind_cases()[info.param].name;
                           for (auto& ch : n)
                             if (ch == '-') ch = '_';
                           return n;
                         });

TEST(RandomGraphs, MatchFiniteDifferences) {
  const std::vector<Shape> shapes{{2, 3}, {2, 3}, {3, 3}};
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; checked < 100 && seed < 1000; ++seed) {
    std::mt19937_64 rng(seed + 1);
    const auto x = oracle::uniform(rng, 21, -1.0, 1.0);
    const auto r = oracle::check_graph(
        shapes, [seed](const std::vector<Tensor>& l) { return oracle::random_graph(seed, l); }, x, seed);
    if (r.skipped) continue;
    ++checked;
    EXPECT_LT(r.first, 1e-5) << "graph " << seed;
    EXPECT_LT(r.second, 1e-4) << "graph " << seed;
  }
  EXPECT_EQ(checked, 100u);
}
