#include "metacl/clp.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace metacl {

void TaskDistribution::validate() const {
  if (!pool) throw std::invalid_argument("task distribution has no class pool");
  if (classes_per_task == 0 || shots == 0)
    throw std::invalid_argument("classes_per_task and shots must be >= 1");
  if (classes.size() < classes_per_task)
    throw std::invalid_argument("class pool of " + std::to_string(classes.size()) +
                                " is smaller than classes_per_task " +
                                std::to_string(classes_per_task));
}

Tensor Trajectory::x(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > size()) throw ShapeError("trajectory rows out of range");
  return Tensor::constant({end - begin, input_dim},
                          std::vector<double>(features.begin() + begin * input_dim,
                                              features.begin() + end * input_dim));
}

std::vector<std::size_t> Trajectory::label_range(std::size_t begin, std::size_t end) const {
  return {labels.begin() + begin, labels.begin() + end};
}

Trajectory Trajectory::prefix(std::size_t n) const {
  if (n > size()) throw std::out_of_range("prefix longer than trajectory");
  Trajectory t;
  t.input_dim = input_dim;
  t.features.assign(features.begin(), features.begin() + n * input_dim);
  t.labels.assign(labels.begin(), labels.begin() + n);
  t.items.assign(items.begin(), items.begin() + n);
  for (auto b : class_boundaries)
    if (b < n) t.class_boundaries.push_back(b);
  if (targets) t.targets = slice_rows(*targets, 0, n);
  return t;
}

CLPTask sample_task(const TaskDistribution& dist, Rng& rng) {
  dist.validate();
  std::vector<std::size_t> pool = dist.classes;
  // Partial Fisher-Yates: the first n slots become a uniform ordered sample.
  for (std::size_t i = 0; i < dist.classes_per_task; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(dist.classes_per_task);
  return CLPTask{dist.pool, std::move(pool), dist.shots, dist.loss};
}

CLPTask sub_task(const CLPTask& task, std::span<const std::size_t> positions) {
  CLPTask out{task.pool, {}, task.shots, task.loss};
  for (auto p : positions) out.class_sequence.push_back(task.class_sequence.at(p));
  return out;
}

Trajectory sample_trajectory(const CLPTask& task, Rng& rng) {
  return sample_trajectory(task, rng, task.shots, nullptr);
}

Trajectory sample_trajectory(const CLPTask& task, Rng& rng, std::size_t shots,
                             const Trajectory* disjoint_from) {
  if (!task.pool || task.class_sequence.empty()) throw std::invalid_argument("empty task");
  if (shots == 0) throw std::invalid_argument("shots must be >= 1");
  Trajectory t;
  t.input_dim = task.input_dim();
  for (std::size_t pos = 0; pos < task.class_sequence.size(); ++pos) {
    std::vector<std::size_t> excluded;
    if (disjoint_from)
      for (std::size_t i = 0; i < disjoint_from->size(); ++i)
        if (disjoint_from->labels[i] == pos) excluded.push_back(disjoint_from->items[i]);
    auto draws = task.pool->draw(task.class_sequence[pos], shots, rng, excluded);
    t.class_boundaries.push_back(t.labels.size());
    for (auto& s : draws) {
      if (s.x.size() != t.input_dim) throw ShapeError("class pool returned a sample of wrong width");
      t.features.insert(t.features.end(), s.x.begin(), s.x.end());
      t.labels.push_back(pos);
      t.items.push_back(s.item);
    }
  }
  return t;
}

bool is_class_incremental(const Trajectory& traj) {
  if (traj.labels.empty()) return traj.class_boundaries.empty();
  std::size_t block = 0;
  for (std::size_t i = 0; i < traj.labels.size(); ++i) {
    const bool starts = i == 0 || traj.labels[i] != traj.labels[i - 1];
    if (starts) {
      if (traj.labels[i] != block) return false;
      if (block >= traj.class_boundaries.size() || traj.class_boundaries[block] != i) return false;
      ++block;
    }
  }
  return block == traj.class_boundaries.size();
}

Tensor trajectory_loss(const ParamSet& params, const Trajectory& traj, LossKind kind) {
  const auto out = logits(params, traj.x());
  if (kind == LossKind::Mse && traj.targets)
    return loss_from_outputs(out, *traj.targets, kind, Reduction::Sum);
  return loss_from_outputs(out, traj.labels, kind, Reduction::Sum);
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
  out << "step,label";
  for (std::size_t f = 0; f < traj.input_dim; ++f) out << ",feature_" << f;
  out << '\n';
  const auto old_precision = out.precision(17);
  for (std::size_t i = 0; i < traj.size(); ++i) {
    out << i << ',' << traj.labels[i];
    for (std::size_t f = 0; f < traj.input_dim; ++f) out << ',' << traj.features[i * traj.input_dim + f];
    out << '\n';
  }
  out.precision(old_precision);
}

// ---------------------------------------------------------------------------
// Gaussian clusters

GaussianPool::GaussianPool(std::size_t input_dim, std::size_t classes, double separation,
                           double spread, std::uint64_t seed)
    : dim_(input_dim), classes_(classes), spread_(spread), centers_(input_dim * classes) {
  if (input_dim == 0 || classes == 0) throw std::invalid_argument("empty gaussian pool");
  if (spread < 0.0 || separation < 0.0) throw std::invalid_argument("negative spread/separation");
  Rng rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::size_t c = 0; c < classes; ++c) {
    double* v = centers_.data() + c * dim_;
    double norm = 0.0;
    do {
      norm = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) {
        v[i] = n01(rng);
        norm += v[i] * v[i];
      }
    } while (norm == 0.0);
    const double s = separation / std::sqrt(norm);
    for (std::size_t i = 0; i < dim_; ++i) v[i] *= s;
  }
}

std::span<const double> GaussianPool::center(std::size_t cls) const {
  if (cls >= classes_) throw std::out_of_range("class id out of range");
  return {centers_.data() + cls * dim_, dim_};
}

std::vector<Sample> GaussianPool::draw(std::size_t cls, std::size_t count, Rng& rng,
                                       std::span<const std::size_t>) const {
  const auto c = center(cls);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<Sample> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    out[k].x.resize(dim_);
    for (std::size_t i = 0; i < dim_; ++i) out[k].x[i] = c[i] + spread_ * n01(rng);
    out[k].item = k;
  }
  return out;
}

TaskDistribution make_gaussian_distribution(std::size_t input_dim, std::size_t pool_size,
                                            std::size_t classes_per_task, std::size_t shots,
                                            double spread, std::uint64_t seed, double separation) {
  TaskDistribution d;
  d.pool = std::make_shared<GaussianPool>(input_dim, pool_size, separation, spread, seed);
  d.classes.resize(pool_size);
  for (std::size_t i = 0; i < pool_size; ++i) d.classes[i] = i;
  d.classes_per_task = classes_per_task;
  d.shots = shots;
  d.name = "gaussian";
  d.validate();
  return d;
}

Benchmark make_gaussian_benchmark(const GaussianSpec& spec) {
  auto pool = std::make_shared<GaussianPool>(spec.input_dim, spec.train_classes + spec.test_classes,
                                             spec.separation, spec.spread, spec.seed);
  Benchmark b;
  for (auto* d : {&b.meta_train, &b.meta_test}) {
    d->pool = pool;
    d->classes_per_task = spec.classes_per_task;
    d->shots = spec.shots;
  }
  for (std::size_t i = 0; i < spec.train_classes; ++i) b.meta_train.classes.push_back(i);
  for (std::size_t i = 0; i < spec.test_classes; ++i) b.meta_test.classes.push_back(spec.train_classes + i);
  b.meta_train.name = "gaussian/meta-train";
  b.meta_test.name = "gaussian/meta-test";
  b.meta_train.validate();
  b.meta_test.validate();
  return b;
}

}  // namespace metacl
