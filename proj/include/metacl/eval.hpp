#pragma once

// Meta-testing: a fresh head is trained on top of a frozen encoder, either
// online (one pass, one point at a time, in stream order) or IID (the same
// data shuffled for several epochs). Accuracy is measured only over classes
// seen so far, at every class boundary.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "metacl/clp.hpp"
#include "metacl/models.hpp"
#include "metacl/rng.hpp"

namespace metacl {

enum class EvalMode { Online, Iid };

struct EvalProtocol {
  double head_lr = 0.03;
  std::size_t tasks = 50;
  std::size_t test_samples_per_class = 5;
  std::size_t iid_epochs = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct OnlineOptions {
  std::size_t test_samples_per_class = 5;
  /// Also adapt the encoder at meta-test time (ablation only).
  bool update_encoder = false;
};

struct OnlineResult {
  // Index j holds the value after class j+1 has been fully seen.
  std::vector<double> train_acc;
  std::vector<double> test_acc;
  // Instrumentation: rows evaluated and the largest label among them, per checkpoint.
  std::vector<std::size_t> train_rows_used;
  std::vector<std::size_t> test_rows_used;
  std::vector<std::size_t> max_label_used;
  std::size_t sgd_steps = 0;
  ParamSet final_params;
};

struct IidResult {
  double train_acc = 0.0;
  double test_acc = 0.0;
  std::size_t sgd_steps = 0;
};

/// Head re-initialized from `seed` with the same shapes; encoder untouched.
ParamSet reinit_head(const ParamSet& params, std::uint64_t seed);

/// rng draws, in order: head-init seed, S_train, held-out test samples.
OnlineResult meta_test_online(const ParamSet& trained, const CLPTask& task, double alpha, Rng& rng,
                              const OnlineOptions& options = {});

/// Same draws as meta_test_online, then one shuffle per epoch.
IidResult meta_test_iid(const ParamSet& trained, const CLPTask& task, double alpha, std::size_t epochs,
                        Rng& rng, std::size_t test_samples_per_class = 5);

struct EvalCurve {
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> ci_halfwidth;              // 1.96 * sample stdev / sqrt(tasks)
  std::vector<std::vector<double>> per_task;     // per_task[t][i]
};

EvalCurve aggregate_curves(const std::vector<std::vector<double>>& per_task, std::vector<double> x = {});

struct NamedEncoder {
  std::string name;
  ParamSet params;
  double head_lr = 0.03;
};

struct EncoderReport {
  std::string name;
  double head_lr = 0.0;
  EvalCurve online_train, online_test, iid_train, iid_test;
  std::size_t online_steps_per_task = 0;
  std::size_t iid_steps_per_task = 0;
  std::vector<std::vector<std::size_t>> task_log;  // class sequence of each evaluated task
};

struct PairedDifference {
  std::string name;       // encoder compared against the first one
  std::string protocol;   // online_train, online_test, iid_train, iid_test
  double mean = 0.0;
  double ci_halfwidth = 0.0;
};

struct Comparison {
  std::vector<EncoderReport> reports;
  std::vector<PairedDifference> paired;  // final-point differences vs reports[0]
};

/// Evaluates every encoder on the same task sequence, under both protocols.
Comparison compare_objectives(const std::vector<NamedEncoder>& encoders, const TaskDistribution& dist,
                              const EvalProtocol& protocol);

struct OnlineEvaluation {
  EvalCurve train, test;
  /// Encoder checksum after each task's online pass.
  std::vector<std::uint64_t> encoder_checksums;
  std::vector<std::vector<std::size_t>> task_log;
};

/// Online protocol only, on the same task and data streams as compare_objectives.
OnlineEvaluation evaluate_online(const ParamSet& params, const TaskDistribution& dist,
                                 const EvalProtocol& protocol, const OnlineOptions& options);

/// encoder_name,protocol,classes_seen,mean_acc,ci_halfwidth
void write_curve_csv_header(std::ostream& out);
void write_curve_rows(std::ostream& out, const std::string& encoder, const std::string& protocol,
                      const EvalCurve& curve);

/// Final-point summary; the paired column appears only when there are >= 2 encoders.
void write_summary_csv(std::ostream& out, const Comparison& cmp);

}  // namespace metacl
