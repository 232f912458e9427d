#pragma once

// Small meta-learning problems shared by the unit tests and the acceptance runner.

#include <random>

#include "metacl/meta.hpp"
#include "oracles.hpp"

namespace fixture {

using namespace metacl;

/// Bias-free scalar model f(x) = W * (theta * x).
inline ParamSet scalar_model(double theta, double w0) {
  ModelConfig c;
  c.input_dim = 1;
  c.encoder_widths = {};
  c.rep_dim = 1;
  c.output_dim = 1;
  c.encoder_output_relu = false;
  return ParamSet({{"encoder.0.weight", Partition::Encoder, Tensor::constant({1, 1}, {theta})},
                   {"head.0.weight", Partition::Head, Tensor::constant({1, 1}, {w0})}},
                  c);
}

inline Trajectory regression_point(double x, double y) {
  Trajectory t;
  t.input_dim = 1;
  t.features = {x};
  t.labels = {0};
  t.class_boundaries = {0};
  t.items = {0};
  t.targets = Tensor::constant({1, 1}, {y});
  return t;
}

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.input_dim = 3;
  c.encoder_widths = {3};
  c.rep_dim = 3;
  c.output_dim = 2;
  return c;
}

struct TinyProblem {
  ParamSet params;
  Trajectory train, test, test2;
};

/// 2 classes x 2 shots: H = 4, 32 parameters.
inline TinyProblem tiny_problem(std::uint64_t seed) {
  const auto d = make_gaussian_distribution(3, 6, 2, 2, 0.8, seed, 1.5);
  Rng rng(seed + 100);
  const auto task = sample_task(d, rng);
  // Non-zero biases keep every relu input away from exactly 0, where finite
  // differences are meaningless (a fully dead layer feeding a zero bias).
  ParamSet params = init_params(tiny_config(), seed);
  std::vector<Tensor> values;
  std::mt19937_64 brng(seed + 200);
  for (const auto& e : params.entries())
    values.push_back(e.value.rank() == 1
                         ? Tensor::constant(e.value.shape(), oracle::uniform(brng, e.value.size(), -0.3, 0.3))
                         : e.value);
  return {params.with_values(values), sample_trajectory(task, rng), sample_trajectory(task, rng),
          sample_trajectory(task, rng)};
}

inline MetaConfig config(double alpha, PartitionMode mode = PartitionMode::EncoderOnly) {
  MetaConfig c;
  c.inner_lr = alpha;
  c.partition = mode;
  return c;
}

inline std::vector<Shape> shapes_of(const ParamSet& p) {
  std::vector<Shape> s;
  for (const auto& e : p.entries()) s.push_back(e.value.shape());
  return s;
}

inline ParamSet from_flat(const ParamSet& like, const oracle::Vec& x) {
  return like.with_values(oracle::unflatten(x, shapes_of(like)));
}

/// Outer loss of adapted parameters on the first `rows` test points.
inline double outer_of(const ParamSet& adapted, const Trajectory& test, std::size_t rows) {
  const Trajectory t = test.prefix(rows);
  if (t.targets) return predict_loss(adapted, t.x(), *t.targets, LossKind::Mse).item();
  return predict_loss(adapted, t.x(), t.labels, LossKind::CrossEntropy).item();
}

}  // namespace fixture
