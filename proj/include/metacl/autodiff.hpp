#pragma once

// Reverse-mode automatic differentiation over a dynamic tape.
//
// Every operation on a tensor that lives on a Tape appends a node holding the
// eagerly computed forward value. Backward rules are themselves written in
// terms of tape operations, so gradient(..., create_graph=true) returns
// tensors that can be differentiated again. This is what makes exact
// meta-gradients through unrolled SGD possible.
//
// Tensors without a node are constants. Operations whose inputs are all
// constants produce constants and never touch a tape.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace metacl {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an operation would produce NaN/Inf or hits a domain error.
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Buffer {
  Shape shape;
  std::vector<double> data;
};

class Tape;

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);

  bool defined() const { return buffer_ != nullptr; }
  bool is_constant() const { return !node_.has_value(); }

  const Shape& shape() const;
  std::span<const double> values() const;
  std::size_t size() const { return values().size(); }
  std::size_t rank() const { return shape().size(); }
  double item() const;
  double at(std::size_t flat_index) const { return values()[flat_index]; }

  std::optional<std::size_t> node_id() const { return node_; }
  Tape* tape() const { return tape_; }

  /// Constant sharing this tensor's value; severs any tape linkage.
  Tensor detach() const;

  std::shared_ptr<const Buffer> buffer() const { return buffer_; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t node, std::uint64_t generation,
         std::shared_ptr<const Buffer> buffer)
      : tape_(tape), node_(node), generation_(generation), buffer_(std::move(buffer)) {}
  explicit Tensor(std::shared_ptr<const Buffer> buffer) : buffer_(std::move(buffer)) {}

  Tape* tape_ = nullptr;
  std::optional<std::size_t> node_;
  std::uint64_t generation_ = 0;
  std::shared_ptr<const Buffer> buffer_;
};

enum class OpKind {
  Leaf,
  StopGradient,
  Add,
  Sub,
  Mul,
  MatMul,
  Relu,
  ScalarMul,
  Sum,
  Mean,
  Square,
  Log,
  Softmax,
  CrossEntropy,
  Mse,
  Slice,
  Reshape,
  Concat,
  // Used by backward rules; also callable directly.
  Transpose,
  Reciprocal,
  Expand,
  PadRows,
};

std::string_view op_name(OpKind kind);
/// Parses an op-kind name ("add", "matmul", "cross-entropy", ...). Throws on unknown names.
OpKind parse_op_kind(std::string_view name);

enum class Reduction { Mean, Sum };

/// Per-op attributes. Only the fields relevant to a given OpKind are read.
struct OpAttrs {
  double scalar = 0.0;                 // ScalarMul
  std::size_t begin = 0, end = 0;      // Slice / PadRows (rows along axis 0)
  std::size_t total_rows = 0;          // PadRows
  Shape shape;                         // Reshape / Expand target
  std::vector<std::size_t> labels;     // CrossEntropy class indices
  Reduction reduction = Reduction::Mean;
};

struct Node {
  OpKind kind = OpKind::Leaf;
  std::vector<Tensor> inputs;  // node-backed or constant operands, in order
  OpAttrs attrs;
  std::shared_ptr<const Buffer> value;
  std::uint64_t generation = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  /// Differentiable leaf.
  Tensor variable(Shape shape, std::vector<double> values);
  Tensor variable(const Tensor& value);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

  /// Node index usable with truncate().
  std::size_t mark() const { return nodes_.size(); }
  /// Drops every node at index >= mark. Tensors that referenced dropped nodes
  /// become stale; using them afterwards throws.
  void truncate(std::size_t mark);

  /// Recomputes every non-leaf node from its operands.
  std::vector<Buffer> replay() const;
  /// True when replay() reproduces every stored value bit-for-bit.
  bool replay_matches() const;

  Tensor handle(std::size_t id) const;
  void check_live(const Tensor& t) const;

 private:
  friend Tensor record(OpKind, std::vector<Tensor>, OpAttrs);
  Tensor push(Node node);

  std::vector<Node> nodes_;
  std::uint64_t generation_ = 1;
};

/// Computes the op eagerly and appends a node when any input lives on a tape.
Tensor record(OpKind kind, std::vector<Tensor> inputs, OpAttrs attrs = {});
Tensor record(std::string_view kind, std::vector<Tensor> inputs, OpAttrs attrs = {});

/// Pure forward evaluation of an op on raw buffers (also used by replay).
Buffer evaluate(OpKind kind, std::span<const Buffer* const> inputs, const OpAttrs& attrs);

// Op helpers. `add`/`sub` broadcast a rank-1 right operand over the rows of a
// rank-2 left operand (bias addition); every other elementwise op requires
// equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor square(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softmax(const Tensor& a);
Tensor cross_entropy(const Tensor& logits, std::vector<std::size_t> labels,
                     Reduction reduction = Reduction::Mean);
/// Half the squared error summed over each row; Mean averages over rows.
Tensor mse(const Tensor& prediction, const Tensor& target, Reduction reduction = Reduction::Mean);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor index(const Tensor& a, std::size_t row);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor transpose(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor expand(const Tensor& scalar, Shape shape);
Tensor pad_rows(const Tensor& a, std::size_t begin, std::size_t total_rows);

/// Value-identical tensor that passes zero gradient to its input.
Tensor stop_gradient(const Tensor& t);

/// d output / d wrt[k]. `output` must hold exactly one value. A wrt tensor the
/// output does not depend on (including constants) yields a zero tensor of its
/// shape. With create_graph the results are tape nodes and can be
/// differentiated again; otherwise they are constants. The numeric values are
/// the same either way.
std::vector<Tensor> gradient(const Tensor& output, std::span<const Tensor> wrt,
                             bool create_graph = false);

/// Functional SGD update: returns new tensors params[k] - alpha * grads[k].
std::vector<Tensor> sgd_step(std::span<const Tensor> params, std::span<const Tensor> grads,
                             double alpha);

}  // namespace metacl
