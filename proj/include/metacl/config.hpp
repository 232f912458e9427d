#pragma once

// Flat `key = value` run configuration. '#' starts a comment; nesting is
// expressed with dotted keys (model.encoder_widths). Unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "metacl/clp.hpp"
#include "metacl/eval.hpp"
#include "metacl/meta.hpp"
#include "metacl/models.hpp"

namespace metacl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DataSource { Gaussian, Omniglot };

struct DataConfig {
  DataSource source = DataSource::Gaussian;
  std::string omniglot_root;  // falls back to $METACL_OMNIGLOT_ROOT
  std::size_t image_size = 28;
  std::size_t input_dim = 8;
  std::size_t train_classes = 60;
  std::size_t test_classes = 40;
  std::size_t classes_per_task = 10;
  std::size_t shots = 5;
  double separation = 4.0;
  double spread = 0.5;
  std::uint64_t seed = 0;  // fixes the synthetic class centers
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  DataConfig data;
  ModelConfig model;  // input_dim/output_dim are filled from the data section
  MetaConfig meta;
  double inner_lr_maml = 0.5;
  double inner_lr_mrcl = 0.03;
  std::size_t checkpoint_every = 500;
  EvalProtocol eval;
  std::optional<double> eval_head_lr;  // unset: use each checkpoint's inner lr
  std::vector<double> sweep_lrs;       // empty: 12-point log grid over [1e-6, 1]
  std::size_t sweep_tasks = 50;
  std::size_t sweep_iterations = 2000;  // meta-training budget per sweep candidate
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// The built-in desk-scale preset, as config text.
std::string default_config_text();

/// Validates paths and cross-field constraints before any work starts.
void validate_run_config(const RunConfig& cfg);

Benchmark make_benchmark(const RunConfig& cfg);
ModelConfig model_config(const RunConfig& cfg);
/// MetaConfig with the inner lr of `objective` and the meta-train stream seed.
MetaConfig meta_config(const RunConfig& cfg, Objective objective);
EvalProtocol eval_protocol(const RunConfig& cfg);
std::uint64_t init_seed(const RunConfig& cfg);

}  // namespace metacl
