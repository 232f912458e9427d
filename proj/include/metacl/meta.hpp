#pragma once

// Meta-training objectives.
//
//   MAML            K full-batch SGD steps on S_train, outer loss on S_test.
//   MRCL            one online SGD step per point of S_train, in stream order,
//                   outer loss on S_test after the whole stream.
//   MRCL-truncated  the MRCL stream walked in chunks of m steps; after each
//                   chunk the meta-gradient of the loss on the seen prefix of a
//                   fresh S_test is accumulated and the fast weights are cut
//                   from the graph.
//
// All objectives differentiate through the inner updates (second order)
// unless MetaConfig::first_order is set.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "metacl/clp.hpp"
#include "metacl/models.hpp"
#include "metacl/rng.hpp"

namespace metacl {

enum class Objective { Maml, Mrcl, MrclTruncated };
std::string_view objective_name(Objective o);
Objective parse_objective(std::string_view name);

/// Which parameters the inner loop adapts. The outer step always updates all of them.
enum class PartitionMode { EncoderOnly, FullInit };
std::string_view partition_mode_name(PartitionMode m);
PartitionMode parse_partition_mode(std::string_view name);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct MetaConfig {
  double inner_lr = 0.03;        // alpha
  double meta_lr = 1e-4;         // beta
  std::size_t inner_steps = 5;   // K, MAML
  std::size_t truncation = 5;    // m, truncated MRCL
  std::size_t maml_ways = 5;     // classes per MAML sub-task
  PartitionMode partition = PartitionMode::EncoderOnly;
  std::size_t iterations = 0;
  std::uint64_t seed = 0;
  bool first_order = false;      // treat inner gradients as constants
  AdamConfig adam;

  void validate() const;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;
};

struct MetaState {
  ParamSet params;
  AdamState adam;
  std::size_t iteration = 0;
  std::vector<double> loss_history;
};

MetaState make_meta_state(ParamSet params);

struct MetaGradient {
  double outer_loss = 0.0;
  std::vector<Tensor> grads;  // aligned with the ParamSet entries, constants
};

MetaGradient maml_meta_gradient(const ParamSet& params, const Trajectory& train,
                                const Trajectory& test, const MetaConfig& cfg);
MetaGradient mrcl_meta_gradient(const ParamSet& params, const Trajectory& train,
                                const Trajectory& test, const MetaConfig& cfg);

/// Supplies the test trajectory used after chunk `chunk` (0-based).
using TestSampler = std::function<Trajectory(std::size_t chunk)>;
MetaGradient mrcl_truncated_meta_gradient(const ParamSet& params, const Trajectory& train,
                                          const TestSampler& test_for_chunk, const MetaConfig& cfg);

/// The K (MAML) or |S_train| (MRCL) inner updates, with no outer differentiation.
/// Returns the adapted parameters as constants.
ParamSet adapt(const ParamSet& params, const Trajectory& train, Objective objective,
               const MetaConfig& cfg);

/// One Adam step on all parameters.
MetaState apply_meta_gradient(const MetaState& state, const MetaGradient& grad, const MetaConfig& cfg);

// Each meta-step consumes exactly one 64-bit draw from `rng` and derives all
// of its sampling from it. A non-finite loss throws NumericError and leaves the
// caller's state untouched.
MetaState maml_meta_step(const MetaState& state, const TaskDistribution& dist, const MetaConfig& cfg, Rng& rng);
MetaState mrcl_meta_step(const MetaState& state, const TaskDistribution& dist, const MetaConfig& cfg, Rng& rng);
MetaState mrcl_truncated_meta_step(const MetaState& state, const TaskDistribution& dist,
                                   const MetaConfig& cfg, Rng& rng);
MetaState meta_step(Objective objective, const MetaState& state, const TaskDistribution& dist,
                    const MetaConfig& cfg, Rng& rng);

struct TrainOptions {
  std::size_t checkpoint_every = 0;
  std::function<void(const MetaState&)> on_checkpoint;
  /// Receives the run-log CSV (header + one row per iteration).
  std::ostream* log = nullptr;
};

void write_run_log_header(std::ostream& out);

/// Runs `iterations` meta-steps from `initial`, seeded by cfg.seed.
MetaState meta_train(const MetaState& initial, const TaskDistribution& dist, const MetaConfig& cfg,
                     Objective objective, std::size_t iterations, const TrainOptions& options = {});

}  // namespace metacl
