#pragma once

// f(X) = head(encoder(X)): an MLP encoder producing a d-dimensional
// representation followed by a fully connected head. Encoder parameters are
// the meta-learned representation; head parameters are the fast weights.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "metacl/autodiff.hpp"

namespace metacl {

enum class Partition { Encoder, Head };

std::string_view partition_name(Partition p);
Partition parse_partition(std::string_view name);

struct ModelConfig {
  std::size_t input_dim = 8;
  std::vector<std::size_t> encoder_widths{64};  // hidden widths before the representation layer
  std::size_t rep_dim = 64;
  std::size_t output_dim = 10;
  std::size_t head_depth = 1;
  // ReLU on the representation itself. Off gives a purely linear last encoder layer.
  bool encoder_output_relu = true;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct ParamEntry {
  std::string name;
  Partition partition;
  Tensor value;
};

/// Ordered, named parameter collection. Updates build new ParamSets.
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(std::vector<ParamEntry> entries, std::optional<ModelConfig> config = {});

  /// Architecture the parameters were built for, when known.
  const std::optional<ModelConfig>& config() const { return config_; }

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const ParamEntry& operator[](std::size_t i) const { return entries_[i]; }
  const Tensor& get(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  std::vector<Tensor> tensors() const;
  std::vector<Tensor> tensors(Partition p) const;
  std::vector<std::size_t> indices(Partition p) const;
  std::size_t parameter_count() const;

  /// Same names and partitions, new values (order-aligned).
  ParamSet with_values(std::vector<Tensor> values) const;
  /// Replaces the tensors at `positions`.
  ParamSet with_values(const std::vector<std::size_t>& positions, std::vector<Tensor> values) const;
  /// Registers every parameter as a fresh leaf on `tape`.
  ParamSet attach(Tape& tape) const;
  /// Constant copy with all tape links removed.
  ParamSet detach() const;

  /// Replaces the head with `head` (matching names and shapes required).
  ParamSet with_head_from(const ParamSet& other) const;

  /// FNV-1a over names, shapes and value bits; used to detect mutation.
  std::uint64_t checksum() const;

 private:
  std::vector<ParamEntry> entries_;
  std::optional<ModelConfig> config_;
};

/// Weights uniform in +-sqrt(6/fan_in), biases zero. Deterministic in `seed`.
ParamSet init_params(const ModelConfig& config, std::uint64_t seed);

Tensor encode(const ParamSet& params, const Tensor& x);
Tensor head_logits(const ParamSet& params, const Tensor& features);
Tensor logits(const ParamSet& params, const Tensor& x);

enum class LossKind { CrossEntropy, Mse };
std::string_view loss_name(LossKind k);
LossKind parse_loss(std::string_view name);

/// Classification targets as class indices, or a dense target matrix
/// (regression targets, or one-hot rows for cross-entropy).
using Targets = std::variant<std::vector<std::size_t>, Tensor>;

/// Scalar loss over the batch. With Reduction::Mean (default) this is the
/// average per-sample loss.
Tensor predict_loss(const ParamSet& params, const Tensor& x, const Targets& y, LossKind kind,
                    Reduction reduction = Reduction::Mean);
Tensor loss_from_outputs(const Tensor& outputs, const Targets& y, LossKind kind,
                         Reduction reduction = Reduction::Mean);

/// Row-wise argmax; ties go to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& scores);
/// Fraction of rows whose argmax matches the label.
double accuracy_from_logits(const Tensor& scores, const std::vector<std::size_t>& labels);
double accuracy(const ParamSet& params, const Tensor& x, const std::vector<std::size_t>& labels);

}  // namespace metacl
