#pragma once

#include <vector>

#include "metacl/eval.hpp"
#include "metacl/meta.hpp"

namespace metacl {

struct SweepEntry {
  double inner_lr = 0.0;
  double final_train_acc = 0.0;  // mean online train accuracy after the last class
  double final_test_acc = 0.0;
  double final_outer_loss = 0.0;
  MetaState state;
};

struct SweepResult {
  double best_lr = 0.0;
  std::vector<SweepEntry> entries;  // sorted: accuracy descending, ties toward the smaller lr
};

/// Twelve log-spaced candidates from 1e-6 to 1.0.
std::vector<double> default_lr_grid();

/// Meta-trains one model per candidate inner lr (same seed and initial state),
/// then scores each by online meta-testing on `eval_dist` with head lr = candidate.
SweepResult inner_lr_sweep(const MetaState& initial, const TaskDistribution& train_dist,
                           const TaskDistribution& eval_dist, const MetaConfig& cfg, Objective objective,
                           const std::vector<double>& candidates, const EvalProtocol& protocol);

}  // namespace metacl
