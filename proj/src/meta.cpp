#include "metacl/meta.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "metacl/csv.hpp"

namespace metacl {

std::string_view objective_name(Objective o) {
  switch (o) {
    case Objective::Maml: return "maml";
    case Objective::Mrcl: return "mrcl";
    case Objective::MrclTruncated: return "mrcl-truncated";
  }
  return "?";
}

Objective parse_objective(std::string_view name) {
  if (name == "maml") return Objective::Maml;
  if (name == "mrcl") return Objective::Mrcl;
  if (name == "mrcl-truncated") return Objective::MrclTruncated;
  throw std::invalid_argument("unknown objective '" + std::string(name) + "'");
}

std::string_view partition_mode_name(PartitionMode m) {
  return m == PartitionMode::EncoderOnly ? "encoder-only" : "full-init";
}

PartitionMode parse_partition_mode(std::string_view name) {
  if (name == "encoder-only") return PartitionMode::EncoderOnly;
  if (name == "full-init") return PartitionMode::FullInit;
  throw std::invalid_argument("unknown partition mode '" + std::string(name) + "'");
}

void MetaConfig::validate() const {
  if (!(inner_lr >= 0.0)) throw std::invalid_argument("inner_lr must be >= 0");
  if (!(meta_lr > 0.0)) throw std::invalid_argument("meta_lr must be > 0");
  if (inner_steps == 0) throw std::invalid_argument("inner_steps must be >= 1");
  if (truncation == 0) throw std::invalid_argument("truncation must be >= 1");
  if (maml_ways == 0) throw std::invalid_argument("maml_ways must be >= 1");
}

MetaState make_meta_state(ParamSet params) {
  MetaState s;
  for (const auto& e : params.entries()) {
    s.adam.m.emplace_back(e.value.size(), 0.0);
    s.adam.v.emplace_back(e.value.size(), 0.0);
  }
  s.params = std::move(params);
  return s;
}

namespace {

struct RowRange {
  std::size_t begin, end;
};

Tensor rows_loss(const Tensor& outputs, const Trajectory& traj, RowRange r, LossKind kind) {
  if (kind == LossKind::Mse && traj.targets)
    return loss_from_outputs(outputs, slice_rows(*traj.targets, r.begin, r.end), kind);
  return loss_from_outputs(outputs, traj.label_range(r.begin, r.end), kind);
}

LossKind loss_of(const Trajectory& traj) {
  return traj.targets ? LossKind::Mse : LossKind::CrossEntropy;
}

// Inner-loop state on a tape. In encoder-only mode the encoder is fixed for
// the whole inner loop, so the representation of the training stream is
// computed once and sliced per step.
class InnerLoop {
 public:
  InnerLoop(ParamSet params, const Trajectory& train, const MetaConfig& cfg)
      : params_(std::move(params)), train_(train), cfg_(cfg) {
    if (cfg_.partition == PartitionMode::EncoderOnly) {
      adapted_ = params_.indices(Partition::Head);
      features_ = encode(params_, train_.x());
    } else {
      for (std::size_t i = 0; i < params_.size(); ++i) adapted_.push_back(i);
    }
  }

  void step(RowRange r) {
    Tensor out;
    if (features_.defined()) {
      const Tensor f = (r.begin == 0 && r.end == train_.size()) ? features_
                                                                : slice_rows(features_, r.begin, r.end);
      out = head_logits(params_, f);
    } else {
      out = logits(params_, train_.x(r.begin, r.end));
    }
    const Tensor loss = rows_loss(out, train_, r, loss_of(train_));
    std::vector<Tensor> wrt;
    for (auto i : adapted_) wrt.push_back(params_[i].value);
    const auto grads = gradient(loss, wrt, !cfg_.first_order);
    params_ = params_.with_values(adapted_, sgd_step(wrt, grads, cfg_.inner_lr));
  }

  const ParamSet& params() const { return params_; }

  // Replaces the adapted weights by value-identical fresh leaves: later inner
  // steps can still differentiate with respect to them, but nothing flows back
  // past the cut to the meta-parameters.
  void cut(Tape& tape, const std::vector<Tensor>& values) {
    std::vector<Tensor> fresh;
    for (const auto& v : values) fresh.push_back(tape.variable(v.detach()));
    params_ = params_.with_values(adapted_, std::move(fresh));
  }

  std::vector<Tensor> adapted_values() const {
    std::vector<Tensor> out;
    for (auto i : adapted_) out.push_back(params_[i].value);
    return out;
  }

 private:
  ParamSet params_;
  const Trajectory& train_;
  const MetaConfig& cfg_;
  std::vector<std::size_t> adapted_;
  Tensor features_;
};

Tensor outer_loss(const ParamSet& adapted, const Trajectory& test, std::size_t rows) {
  const auto out = logits(adapted, test.x(0, rows));
  return rows_loss(out, test, {0, rows}, loss_of(test));
}

MetaGradient finish(const Tensor& loss, const ParamSet& leaves) {
  MetaGradient g;
  g.outer_loss = loss.item();
  g.grads = gradient(loss, leaves.tensors(), false);
  return g;
}

std::vector<RowRange> online_batches(std::size_t begin, std::size_t end) {
  std::vector<RowRange> out;
  for (std::size_t j = begin; j < end; ++j) out.push_back({j, j + 1});
  return out;
}

}  // namespace

MetaGradient maml_meta_gradient(const ParamSet& params, const Trajectory& train, const Trajectory& test,
                                const MetaConfig& cfg) {
  cfg.validate();
  Tape tape;
  const ParamSet leaves = params.attach(tape);
  InnerLoop inner(leaves, train, cfg);
  for (std::size_t k = 0; k < cfg.inner_steps; ++k) inner.step({0, train.size()});
  return finish(outer_loss(inner.params(), test, test.size()), leaves);
}

MetaGradient mrcl_meta_gradient(const ParamSet& params, const Trajectory& train, const Trajectory& test,
                                const MetaConfig& cfg) {
  cfg.validate();
  if (train.size() == 0) throw std::invalid_argument("empty training trajectory");
  Tape tape;
  const ParamSet leaves = params.attach(tape);
  InnerLoop inner(leaves, train, cfg);
  for (const auto& r : online_batches(0, train.size())) inner.step(r);
  return finish(outer_loss(inner.params(), test, test.size()), leaves);
}

MetaGradient mrcl_truncated_meta_gradient(const ParamSet& params, const Trajectory& train,
                                          const TestSampler& test_for_chunk, const MetaConfig& cfg) {
  cfg.validate();
  if (train.size() == 0) throw std::invalid_argument("empty training trajectory");
  Tape tape;
  const ParamSet leaves = params.attach(tape);
  const std::size_t base = tape.mark();

  MetaGradient total;
  total.grads.reserve(leaves.size());
  for (const auto& e : leaves.entries()) total.grads.push_back(Tensor::zeros(e.value.shape()));

  std::vector<Tensor> fast;  // adapted weight values carried across chunks
  std::size_t chunks = 0;
  for (std::size_t j = 0; j < train.size(); j += cfg.truncation, ++chunks) {
    const std::size_t end = std::min(train.size(), j + cfg.truncation);
    InnerLoop inner(leaves, train, cfg);
    if (!fast.empty()) inner.cut(tape, fast);
    for (const auto& r : online_batches(j, end)) inner.step(r);

    const Trajectory test = test_for_chunk(chunks);
    if (test.size() < end) throw std::invalid_argument("test trajectory shorter than the seen prefix");
    const auto g = finish(outer_loss(inner.params(), test, end), leaves);
    for (std::size_t k = 0; k < total.grads.size(); ++k) total.grads[k] = add(total.grads[k], g.grads[k]);
    total.outer_loss += g.outer_loss;

    // Stop-gradient: keep the fast-weight values, drop the graph that produced them.
    fast.clear();
    for (const auto& v : inner.adapted_values()) fast.push_back(v.detach());
    tape.truncate(base);
  }
  total.outer_loss /= static_cast<double>(chunks);
  return total;
}

ParamSet adapt(const ParamSet& params, const Trajectory& train, Objective objective, const MetaConfig& cfg) {
  cfg.validate();
  std::vector<RowRange> batches;
  if (objective == Objective::Maml) {
    batches.assign(cfg.inner_steps, RowRange{0, train.size()});
  } else {
    batches = online_batches(0, train.size());
  }
  ParamSet current = params.detach();
  for (const auto& r : batches) {
    Tape tape;
    MetaConfig first = cfg;
    first.first_order = true;
    InnerLoop inner(current.attach(tape), train, first);
    inner.step(r);
    current = inner.params().detach();
  }
  return current;
}

MetaState apply_meta_gradient(const MetaState& state, const MetaGradient& grad, const MetaConfig& cfg) {
  if (!std::isfinite(grad.outer_loss)) throw NumericError("non-finite outer loss");
  if (grad.grads.size() != state.params.size()) throw ShapeError("meta-gradient does not match parameters");
  for (const auto& g : grad.grads)
    for (double v : g.values())
      if (!std::isfinite(v)) throw NumericError("non-finite meta-gradient");

  MetaState next = state;
  auto& adam = next.adam;
  ++adam.step;
  const double t = static_cast<double>(adam.step);
  const double c1 = 1.0 - std::pow(cfg.adam.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.adam.beta2, t);
  std::vector<Tensor> updated;
  updated.reserve(state.params.size());
  for (std::size_t i = 0; i < state.params.size(); ++i) {
    const auto& p = state.params[i].value;
    const auto g = grad.grads[i].values();
    auto& m = adam.m[i];
    auto& v = adam.v[i];
    std::vector<double> w(p.values().begin(), p.values().end());
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg.adam.beta1 * m[k] + (1.0 - cfg.adam.beta1) * g[k];
      v[k] = cfg.adam.beta2 * v[k] + (1.0 - cfg.adam.beta2) * g[k] * g[k];
      w[k] -= cfg.meta_lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.adam.eps);
    }
    updated.push_back(Tensor::constant(p.shape(), std::move(w)));
  }
  next.params = state.params.with_values(std::move(updated));
  ++next.iteration;
  next.loss_history.push_back(grad.outer_loss);
  return next;
}

MetaState maml_meta_step(const MetaState& state, const TaskDistribution& dist, const MetaConfig& cfg, Rng& rng) {
  Rng local(rng());
  CLPTask task = sample_task(dist, local);
  if (cfg.maml_ways < task.num_classes()) {
    std::vector<std::size_t> pos(task.num_classes());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
    for (std::size_t i = 0; i < cfg.maml_ways; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pos.size() - 1);
      std::swap(pos[i], pos[pick(local)]);
    }
    pos.resize(cfg.maml_ways);
    std::sort(pos.begin(), pos.end());
    task = sub_task(task, pos);
  }
  const Trajectory train = sample_trajectory(task, local);
  const Trajectory test = sample_trajectory(task, local, task.shots, &train);
  return apply_meta_gradient(state, maml_meta_gradient(state.params, train, test, cfg), cfg);
}

MetaState mrcl_meta_step(const MetaState& state, const TaskDistribution& dist, const MetaConfig& cfg, Rng& rng) {
  Rng local(rng());
  const CLPTask task = sample_task(dist, local);
  const Trajectory train = sample_trajectory(task, local);
  const Trajectory test = sample_trajectory(task, local, task.shots, &train);
  return apply_meta_gradient(state, mrcl_meta_gradient(state.params, train, test, cfg), cfg);
}

MetaState mrcl_truncated_meta_step(const MetaState& state, const TaskDistribution& dist,
                                   const MetaConfig& cfg, Rng& rng) {
  Rng local(rng());
  const CLPTask task = sample_task(dist, local);
  const Trajectory train = sample_trajectory(task, local);
  auto sampler = [&](std::size_t) { return sample_trajectory(task, local, task.shots, &train); };
  return apply_meta_gradient(state, mrcl_truncated_meta_gradient(state.params, train, sampler, cfg), cfg);
}

MetaState meta_step(Objective objective, const MetaState& state, const TaskDistribution& dist,
                    const MetaConfig& cfg, Rng& rng) {
  switch (objective) {
    case Objective::Maml: return maml_meta_step(state, dist, cfg, rng);
    case Objective::Mrcl: return mrcl_meta_step(state, dist, cfg, rng);
    case Objective::MrclTruncated: return mrcl_truncated_meta_step(state, dist, cfg, rng);
  }
  throw std::invalid_argument("unknown objective");
}

void write_run_log_header(std::ostream& out) { out << "iteration,outer_loss,objective,alpha,beta\n"; }

MetaState meta_train(const MetaState& initial, const TaskDistribution& dist, const MetaConfig& cfg,
                     Objective objective, std::size_t iterations, const TrainOptions& options) {
  cfg.validate();
  dist.validate();
  Rng rng = make_rng(cfg.seed, "meta-train");
  MetaState state = initial;
  for (std::size_t it = 0; it < iterations; ++it) {
    try {
      state = meta_step(objective, state, dist, cfg, rng);
    } catch (const NumericError& e) {
      if (options.log) options.log->flush();
      throw NumericError("meta-iteration " + std::to_string(state.iteration + 1) + ": " + e.what());
    }
    if (options.log)
      *options.log << state.iteration << ',' << format_double(state.loss_history.back()) << ','
                   << objective_name(objective) << ',' << format_double(cfg.inner_lr) << ','
                   << format_double(cfg.meta_lr) << '\n';
    if (options.checkpoint_every && options.on_checkpoint && state.iteration % options.checkpoint_every == 0)
      options.on_checkpoint(state);
  }
  return state;
}

}  // namespace metacl
