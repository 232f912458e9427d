#pragma once

// Experiment commands behind the `metacl` executable. Each returns a process
// exit code; the mapping from failures to codes is stable:
//   0 success, 1 unexpected error, 2 config/data error, 3 numeric failure,
//   4 incompatible checkpoints.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "metacl/meta.hpp"

namespace metacl {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUnexpected = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIncompatible = 4;

class IncompatibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommandOptions {
  std::optional<std::filesystem::path> config;  // unset: built-in desk preset
  std::optional<Objective> objective;           // unset: mrcl
  std::optional<std::filesystem::path> out;     // overrides out_dir
  std::optional<std::uint64_t> seed;            // overrides seed
  std::vector<std::filesystem::path> checkpoints;
  std::vector<double> lrs;                      // sweep candidates, overrides sweep.lrs
  std::ostream* err = nullptr;                  // diagnostics; std::cerr when null
};

/// Meta-trains one objective. Writes run_log_<obj>.csv, <obj>_final.ckpt.json
/// and <obj>_iter<N>.ckpt.json every meta.checkpoint_every iterations.
int cmd_meta_train(const CommandOptions& opts);
/// Compares checkpoints: online_train.csv, online_test.csv, iid_train.csv,
/// iid_test.csv and summary.csv.
int cmd_eval(const CommandOptions& opts);
/// Encoder-vs-initialization ablation: ablation.csv and ablation_summary.csv.
int cmd_ablation(const CommandOptions& opts);
/// Inner-lr sweep with sweep.iterations meta-steps per candidate: sweep_<obj>.csv
/// and the best model as sweep_<obj>_best.ckpt.json.
int cmd_sweep(const CommandOptions& opts);

/// Dispatches by name (train, eval, ablation, sweep).
int run_command(const std::string& name, const CommandOptions& opts);

}  // namespace metacl
