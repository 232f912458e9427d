#include "metacl/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace metacl {

std::vector<double> default_lr_grid() {
  std::vector<double> out;
  for (int i = 0; i < 12; ++i) out.push_back(std::pow(10.0, -6.0 + 6.0 * i / 11.0));
  return out;
}

SweepResult inner_lr_sweep(const MetaState& initial, const TaskDistribution& train_dist,
                           const TaskDistribution& eval_dist, const MetaConfig& cfg, Objective objective,
                           const std::vector<double>& candidates, const EvalProtocol& protocol) {
  if (candidates.empty()) throw std::invalid_argument("inner_lr_sweep: no candidates");
  SweepResult result;
  for (double lr : candidates) {
    MetaConfig c = cfg;
    c.inner_lr = lr;
    SweepEntry e;
    e.inner_lr = lr;
    e.state = meta_train(initial, train_dist, c, objective, c.iterations);
    e.final_outer_loss = e.state.loss_history.empty() ? 0.0 : e.state.loss_history.back();
    EvalProtocol p = protocol;
    p.head_lr = lr;
    p.iid_epochs = 0;
    const auto cmp = compare_objectives({{std::string(objective_name(objective)), e.state.params, lr}}, eval_dist, p);
    e.final_train_acc = cmp.reports[0].online_train.mean.back();
    e.final_test_acc = cmp.reports[0].online_test.mean.back();
    result.entries.push_back(std::move(e));
  }
  std::stable_sort(result.entries.begin(), result.entries.end(), [](const SweepEntry& a, const SweepEntry& b) {
    if (a.final_train_acc != b.final_train_acc) return a.final_train_acc > b.final_train_acc;
    return a.inner_lr < b.inner_lr;
  });
  result.best_lr = result.entries.front().inner_lr;
  return result;
}

}  // namespace metacl
