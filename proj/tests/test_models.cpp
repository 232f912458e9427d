#include <gtest/gtest.h>

#include <cmath>

#include "metacl/models.hpp"
#include "oracles.hpp"

using namespace metacl;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.input_dim = 4;
  c.encoder_widths = {5};
  c.rep_dim = 3;
  c.output_dim = 6;
  return c;
}

}  // namespace

TEST(InitParams, SameSeedIsBitIdentical) {
  const auto a = init_params(ModelConfig{}, 42);
  const auto b = init_params(ModelConfig{}, 42);
  EXPECT_EQ(a.checksum(), b.checksum());
  EXPECT_NE(a.checksum(), init_params(ModelConfig{}, 43).checksum());
}

TEST(InitParams, HeadShapeForDepthOne) {
  ModelConfig c;
  c.input_dim = 8;
  c.encoder_widths = {};
  c.rep_dim = 8;
  c.output_dim = 10;
  const auto p = init_params(c, 0);
  EXPECT_EQ(p.get("head.0.weight").shape(), (Shape{8, 10}));
  EXPECT_EQ(p.get("head.0.bias").shape(), (Shape{10}));
  EXPECT_EQ(p.indices(Partition::Head).size(), 2u);
}

TEST(InitParams, WeightsWithinFanInBound) {
  const auto p = init_params(ModelConfig{}, 9);
  for (const auto& e : p.entries()) {
    if (e.value.rank() != 2) {
      for (double v : e.value.values()) EXPECT_EQ(v, 0.0) << e.name;
      continue;
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(e.value.shape()[0]));
    double mx = 0.0;
    for (double v : e.value.values()) mx = std::max(mx, std::abs(v));
    EXPECT_LE(mx, bound) << e.name;
    EXPECT_GT(mx, 0.5 * bound) << e.name;
  }
}

TEST(InitParams, InvalidConfigThrows) {
  ModelConfig c;
  c.output_dim = 0;
  EXPECT_THROW(init_params(c, 0), std::invalid_argument);
}

TEST(Encode, ZeroWeightsGiveZeroRepresentation) {
  const auto p0 = init_params(small_config(), 1);
  std::vector<Tensor> zeros;
  for (const auto& e : p0.entries()) zeros.push_back(Tensor::zeros(e.value.shape()));
  const auto p = p0.with_values(zeros);
  std::mt19937_64 rng(2);
  const auto z = encode(p, Tensor::constant({3, 4}, oracle::uniform(rng, 12, -5, 5)));
  for (double v : z.values()) EXPECT_EQ(v, 0.0);
}

TEST(Encode, IdentityLayerWithoutOutputReluIsIdentity) {
  ModelConfig c;
  c.input_dim = 3;
  c.encoder_widths = {};
  c.rep_dim = 3;
  c.output_dim = 2;
  c.encoder_output_relu = false;
  const auto p0 = init_params(c, 0);
  auto p = p0.with_values({p0.index_of("encoder.0.weight")},
                          {Tensor::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1})});
  const auto x = Tensor::constant({2, 3}, {-1, 2, -3, 4, -5, 6});
  const auto z = encode(p, x);
  EXPECT_EQ(std::vector<double>(z.values().begin(), z.values().end()),
            std::vector<double>(x.values().begin(), x.values().end()));
}

TEST(Encode, MatchesHandRolledForward) {
  const auto p = init_params(small_config(), 3);
  const auto m = oracle::mlp_from(p);
  std::mt19937_64 rng(4);
  const auto xs = oracle::uniform(rng, 7 * 4, -2, 2);
  const auto z = encode(p, Tensor::constant({7, 4}, xs));
  for (std::size_t r = 0; r < 7; ++r) {
    const auto f = oracle::features(m, oracle::Vec(xs.begin() + r * 4, xs.begin() + r * 4 + 4));
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(z.at(r * 3 + j), f[j], 1e-12);
  }
}

TEST(Encode, WrongInputWidthThrows) {
  const auto p = init_params(small_config(), 3);
  EXPECT_THROW(encode(p, Tensor::zeros({2, 5})), ShapeError);
}

TEST(PredictLoss, UniformLogitsGiveLogC) {
  const auto out = Tensor::zeros({3, 7});
  EXPECT_NEAR(loss_from_outputs(out, std::vector<std::size_t>{0, 3, 6}, LossKind::CrossEntropy).item(),
              std::log(7.0), 1e-14);
}

TEST(PredictLoss, PerfectRegressionIsZero) {
  const auto y = Tensor::constant({2, 2}, {0.5, -1, 3, 2});
  EXPECT_EQ(loss_from_outputs(y, y, LossKind::Mse).item(), 0.0);
}

TEST(PredictLoss, TwoLogitHandValue) {
  const auto out = Tensor::constant({1, 2}, {2, 0});
  const double expect = std::log1p(std::exp(-2.0));
  const double got = loss_from_outputs(out, std::vector<std::size_t>{0}, LossKind::CrossEntropy).item();
  EXPECT_NEAR(got, expect, 1e-14);
  EXPECT_NEAR(got, 0.126928, 1e-6);
}

TEST(PredictLoss, OneHotTargetsEqualIndexTargets) {
  const auto out = Tensor::constant({2, 3}, {0.1, 2, -1, 0.3, 0.3, 4});
  const auto onehot = Tensor::constant({2, 3}, {0, 1, 0, 0, 0, 1});
  EXPECT_EQ(loss_from_outputs(out, onehot, LossKind::CrossEntropy).item(),
            loss_from_outputs(out, std::vector<std::size_t>{1, 2}, LossKind::CrossEntropy).item());
}

TEST(PredictLoss, LabelOutOfRangeThrows) {
  EXPECT_ANY_THROW(loss_from_outputs(Tensor::zeros({1, 3}), std::vector<std::size_t>{3}, LossKind::CrossEntropy));
}

TEST(Accuracy, AllCorrectIsOne) {
  const auto s = Tensor::constant({2, 2}, {5, 0, 0, 5});
  EXPECT_EQ(accuracy_from_logits(s, {0, 1}), 1.0);
}

TEST(Accuracy, ZeroLogitsTieBreakToLowestIndex) {
  EXPECT_EQ(accuracy_from_logits(Tensor::zeros({3, 4}), {1, 2, 3}), 0.0);
  EXPECT_EQ(argmax_rows(Tensor::zeros({1, 4}))[0], 0u);
}

TEST(Accuracy, MatchesBruteForceArgmax) {
  const auto p = init_params(small_config(), 11);
  std::mt19937_64 rng(12);
  const auto xs = oracle::uniform(rng, 20 * 4, -3, 3);
  std::vector<std::size_t> labels(20);
  for (auto& l : labels) l = rng() % 6;
  const auto m = oracle::mlp_from(p);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < 20; ++r) {
    const auto z = oracle::dense_forward(m.head, oracle::features(m, oracle::Vec(xs.begin() + r * 4, xs.begin() + r * 4 + 4)));
    std::size_t best = 0;
    for (std::size_t j = 1; j < z.size(); ++j)
      if (z[j] > z[best]) best = j;
    hits += best == labels[r];
  }
  EXPECT_EQ(accuracy(p, Tensor::constant({20, 4}, xs), labels), static_cast<double>(hits) / 20.0);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(13);
  const auto s = softmax(Tensor::constant({5, 7}, oracle::uniform(rng, 35, -30, 30)));
  for (std::size_t r = 0; r < 5; ++r) {
    double t = 0.0;
    for (std::size_t j = 0; j < 7; ++j) t += s.at(r * 7 + j);
    EXPECT_NEAR(t, 1.0, 1e-14);
  }
}

TEST(ParamSet, AttachDetachRoundTrip) {
  const auto p = init_params(small_config(), 5);
  Tape tape;
  const auto a = p.attach(tape);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_FALSE(a[i].value.is_constant());
  EXPECT_EQ(a.detach().checksum(), p.checksum());
}

TEST(ParamSet, WithValuesLeavesOriginalUntouched) {
  const auto p = init_params(small_config(), 5);
  const auto before = p.checksum();
  const auto q = p.with_values({0}, {Tensor::zeros(p[0].value.shape())});
  EXPECT_EQ(p.checksum(), before);
  EXPECT_NE(q.checksum(), before);
}
