#include "metacl/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

namespace metacl {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
}

std::shared_ptr<const Buffer> make_buffer(Shape shape, std::vector<double> values) {
  validate_shape(shape);
  if (shape_size(shape) != values.size())
    throw ShapeError("shape " + shape_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  return std::make_shared<const Buffer>(Buffer{std::move(shape), std::move(values)});
}

void check_finite(const Buffer& b, OpKind kind) {
  for (double v : b.data)
    if (!std::isfinite(v))
      throw NumericError(std::string(op_name(kind)) + " produced a non-finite value");
}

std::size_t rows_of(const Shape& s) { return s.empty() ? 1 : s[0]; }

[[noreturn]] void mismatch(OpKind kind, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " + shape_string(a) + " vs " +
                   shape_string(b));
}

void expect_arity(OpKind kind, std::size_t got, std::size_t want) {
  if (got != want)
    throw ShapeError(std::string(op_name(kind)) + " expects " + std::to_string(want) +
                     " inputs, got " + std::to_string(got));
}

bool is_row_broadcast(const Shape& a, const Shape& b) {
  return a.size() == 2 && b.size() == 1 && a[1] == b[0];
}

template <class F>
Buffer elementwise(OpKind kind, const Buffer& a, const Buffer& b, F f, bool allow_broadcast) {
  Buffer out{a.shape, std::vector<double>(a.data.size())};
  if (a.shape == b.shape) {
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
  } else if (allow_broadcast && is_row_broadcast(a.shape, b.shape)) {
    const std::size_t cols = b.shape[0];
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i], b.data[i % cols]);
  } else {
    mismatch(kind, a.shape, b.shape);
  }
  return out;
}

template <class F>
Buffer unary(const Buffer& a, F f) {
  Buffer out{a.shape, std::vector<double>(a.data.size())};
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i]);
  return out;
}

Buffer softmax_rows(const Buffer& a, OpKind kind) {
  if (a.shape.size() != 1 && a.shape.size() != 2)
    throw ShapeError(std::string(op_name(kind)) + " expects rank 1 or 2, got " +
                     shape_string(a.shape));
  const std::size_t cols = a.shape.back();
  const std::size_t rows = a.data.size() / cols;
  Buffer out{a.shape, std::vector<double>(a.data.size())};
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = a.data.data() + r * cols;
    double* o = out.data.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return Tensor(make_buffer(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double value) { return constant({}, {value}); }

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const auto n = shape_size(shape);
  return constant(std::move(shape), std::vector<double>(n, value));
}

const Shape& Tensor::shape() const {
  if (!buffer_) throw std::logic_error("undefined tensor");
  return buffer_->shape;
}

std::span<const double> Tensor::values() const {
  if (!buffer_) throw std::logic_error("undefined tensor");
  return buffer_->data;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return values()[0];
}

Tensor Tensor::detach() const { return Tensor(buffer_); }

// ---------------------------------------------------------------------------
// Op names

namespace {
constexpr std::array<std::pair<OpKind, std::string_view>, 22> kOpNames{{
    {OpKind::Leaf, "leaf"},
    {OpKind::StopGradient, "stop-gradient"},
    {OpKind::Add, "add"},
    {OpKind::Sub, "sub"},
    {OpKind::Mul, "mul"},
    {OpKind::MatMul, "matmul"},
    {OpKind::Relu, "relu"},
    {OpKind::ScalarMul, "scalar-mul"},
    {OpKind::Sum, "sum"},
    {OpKind::Mean, "mean"},
    {OpKind::Square, "square"},
    {OpKind::Log, "log"},
    {OpKind::Softmax, "softmax"},
    {OpKind::CrossEntropy, "cross-entropy"},
    {OpKind::Mse, "mse"},
    {OpKind::Slice, "slice"},
    {OpKind::Reshape, "reshape"},
    {OpKind::Concat, "concat"},
    {OpKind::Transpose, "transpose"},
    {OpKind::Reciprocal, "reciprocal"},
    {OpKind::Expand, "expand"},
    {OpKind::PadRows, "pad-rows"},
}};
}  // namespace

std::string_view op_name(OpKind kind) {
  for (const auto& [k, n] : kOpNames)
    if (k == kind) return n;
  return "?";
}

OpKind parse_op_kind(std::string_view name) {
  if (name == "index") return OpKind::Slice;
  for (const auto& [k, n] : kOpNames)
    if (n == name) return k;
  throw std::invalid_argument("unknown op-kind '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Forward evaluation

Buffer evaluate(OpKind kind, std::span<const Buffer* const> in, const OpAttrs& at) {
  switch (kind) {
    case OpKind::Leaf:
    case OpKind::StopGradient: {
      expect_arity(kind, in.size(), 1);
      return *in[0];
    }
    case OpKind::Add:
      expect_arity(kind, in.size(), 2);
      return elementwise(kind, *in[0], *in[1], [](double x, double y) { return x + y; }, true);
    case OpKind::Sub:
      expect_arity(kind, in.size(), 2);
      return elementwise(kind, *in[0], *in[1], [](double x, double y) { return x - y; }, true);
    case OpKind::Mul:
      expect_arity(kind, in.size(), 2);
      return elementwise(kind, *in[0], *in[1], [](double x, double y) { return x * y; }, false);
    case OpKind::MatMul: {
      expect_arity(kind, in.size(), 2);
      const auto& a = *in[0];
      const auto& b = *in[1];
      if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0])
        mismatch(kind, a.shape, b.shape);
      const std::size_t n = a.shape[0], k = a.shape[1], m = b.shape[1];
      Buffer out{{n, m}, std::vector<double>(n * m, 0.0)};
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = a.data[i * k + p];
          const double* brow = b.data.data() + p * m;
          double* orow = out.data.data() + i * m;
          for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
      return out;
    }
    case OpKind::Relu:
      expect_arity(kind, in.size(), 1);
      return unary(*in[0], [](double x) { return x > 0.0 ? x : 0.0; });
    case OpKind::ScalarMul: {
      expect_arity(kind, in.size(), 1);
      const double c = at.scalar;
      return unary(*in[0], [c](double x) { return c * x; });
    }
    case OpKind::Sum:
    case OpKind::Mean: {
      expect_arity(kind, in.size(), 1);
      double s = 0.0;
      for (double v : in[0]->data) s += v;
      if (kind == OpKind::Mean) s /= static_cast<double>(in[0]->data.size());
      return Buffer{{}, {s}};
    }
    case OpKind::Square:
      expect_arity(kind, in.size(), 1);
      return unary(*in[0], [](double x) { return x * x; });
    case OpKind::Log: {
      expect_arity(kind, in.size(), 1);
      for (double v : in[0]->data)
        if (!(v > 0.0)) throw NumericError("log of non-positive value");
      return unary(*in[0], [](double x) { return std::log(x); });
    }
    case OpKind::Reciprocal: {
      expect_arity(kind, in.size(), 1);
      for (double v : in[0]->data)
        if (v == 0.0) throw NumericError("reciprocal of zero");
      return unary(*in[0], [](double x) { return 1.0 / x; });
    }
    case OpKind::Softmax:
      expect_arity(kind, in.size(), 1);
      return softmax_rows(*in[0], kind);
    case OpKind::CrossEntropy: {
      expect_arity(kind, in.size(), 1);
      const auto& a = *in[0];
      if (a.shape.size() != 2) throw ShapeError("cross-entropy expects (batch, classes) logits");
      const std::size_t rows = a.shape[0], cols = a.shape[1];
      if (at.labels.size() != rows)
        throw ShapeError("cross-entropy: " + std::to_string(at.labels.size()) + " labels for " +
                         std::to_string(rows) + " rows");
      double total = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t label = at.labels[r];
        if (label >= cols)
          throw std::out_of_range("cross-entropy: label " + std::to_string(label) +
                                  " out of range for " + std::to_string(cols) + " classes");
        const double* x = a.data.data() + r * cols;
        const double mx = *std::max_element(x, x + cols);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
        total += std::log(z) + mx - x[label];
      }
      if (at.reduction == Reduction::Mean) total /= static_cast<double>(rows);
      return Buffer{{}, {total}};
    }
    case OpKind::Mse: {
      expect_arity(kind, in.size(), 2);
      const auto& p = *in[0];
      const auto& t = *in[1];
      if (p.shape != t.shape) mismatch(kind, p.shape, t.shape);
      double total = 0.0;
      for (std::size_t i = 0; i < p.data.size(); ++i) {
        const double d = p.data[i] - t.data[i];
        total += 0.5 * d * d;
      }
      if (at.reduction == Reduction::Mean) total /= static_cast<double>(rows_of(p.shape));
      return Buffer{{}, {total}};
    }
    case OpKind::Slice: {
      expect_arity(kind, in.size(), 1);
      const auto& a = *in[0];
      if (a.shape.empty()) throw ShapeError("slice of a scalar");
      if (at.begin >= at.end || at.end > a.shape[0])
        throw ShapeError("slice [" + std::to_string(at.begin) + "," + std::to_string(at.end) +
                         ") out of range for " + shape_string(a.shape));
      const std::size_t stride = a.data.size() / a.shape[0];
      Shape s = a.shape;
      s[0] = at.end - at.begin;
      return Buffer{s, std::vector<double>(a.data.begin() + at.begin * stride,
                                           a.data.begin() + at.end * stride)};
    }
    case OpKind::PadRows: {
      expect_arity(kind, in.size(), 1);
      const auto& a = *in[0];
      if (a.shape.empty() || at.begin + a.shape[0] > at.total_rows)
        throw ShapeError("pad-rows out of range");
      const std::size_t stride = a.data.size() / a.shape[0];
      Shape s = a.shape;
      s[0] = at.total_rows;
      Buffer out{s, std::vector<double>(at.total_rows * stride, 0.0)};
      std::copy(a.data.begin(), a.data.end(), out.data.begin() + at.begin * stride);
      return out;
    }
    case OpKind::Reshape: {
      expect_arity(kind, in.size(), 1);
      validate_shape(at.shape);
      if (shape_size(at.shape) != in[0]->data.size()) mismatch(kind, in[0]->shape, at.shape);
      return Buffer{at.shape, in[0]->data};
    }
    case OpKind::Expand: {
      expect_arity(kind, in.size(), 1);
      if (in[0]->data.size() != 1) throw ShapeError("expand expects a single-value tensor");
      validate_shape(at.shape);
      return Buffer{at.shape, std::vector<double>(shape_size(at.shape), in[0]->data[0])};
    }
    case OpKind::Concat: {
      if (in.empty()) throw ShapeError("concat of zero tensors");
      Shape s = in[0]->shape;
      if (s.empty()) throw ShapeError("concat of scalars");
      std::size_t rows = 0;
      std::vector<double> data;
      for (const auto* b : in) {
        if (b->shape.size() != s.size() || !std::equal(b->shape.begin() + 1, b->shape.end(), s.begin() + 1))
          mismatch(kind, s, b->shape);
        rows += b->shape[0];
        data.insert(data.end(), b->data.begin(), b->data.end());
      }
      s[0] = rows;
      return Buffer{s, std::move(data)};
    }
    case OpKind::Transpose: {
      expect_arity(kind, in.size(), 1);
      const auto& a = *in[0];
      if (a.shape.size() != 2) throw ShapeError("transpose expects rank 2");
      const std::size_t r = a.shape[0], c = a.shape[1];
      Buffer out{{c, r}, std::vector<double>(a.data.size())};
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = a.data[i * c + j];
      return out;
    }
  }
  throw std::invalid_argument("unknown op-kind");
}

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::variable(Shape shape, std::vector<double> values) {
  Node n;
  n.kind = OpKind::Leaf;
  n.value = make_buffer(std::move(shape), std::move(values));
  check_finite(*n.value, OpKind::Leaf);
  return push(std::move(n));
}

Tensor Tape::variable(const Tensor& value) {
  Node n;
  n.kind = OpKind::Leaf;
  n.value = value.buffer();
  check_finite(*n.value, OpKind::Leaf);
  return push(std::move(n));
}

Tensor Tape::push(Node node) {
  node.generation = generation_;
  nodes_.push_back(std::move(node));
  const auto id = nodes_.size() - 1;
  return Tensor(this, id, generation_, nodes_.back().value);
}

Tensor Tape::handle(std::size_t id) const {
  const auto& n = nodes_.at(id);
  return Tensor(const_cast<Tape*>(this), id, n.generation, n.value);
}

void Tape::check_live(const Tensor& t) const {
  if (!t.node_) return;
  if (*t.node_ >= nodes_.size() || nodes_[*t.node_].generation != t.generation_)
    throw std::logic_error("tensor refers to a truncated tape node");
}

void Tape::truncate(std::size_t mark) {
  if (mark > nodes_.size()) throw std::out_of_range("truncate mark beyond tape end");
  nodes_.resize(mark);
  ++generation_;
}

std::vector<Buffer> Tape::replay() const {
  std::vector<Buffer> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) {
    if (n.kind == OpKind::Leaf || n.kind == OpKind::StopGradient) {
      out.push_back(*n.value);
      continue;
    }
    std::vector<const Buffer*> ins;
    ins.reserve(n.inputs.size());
    for (const auto& t : n.inputs)
      ins.push_back(t.node_id() ? &out[*t.node_id()] : t.buffer().get());
    out.push_back(evaluate(n.kind, ins, n.attrs));
  }
  return out;
}

bool Tape::replay_matches() const {
  const auto values = replay();
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (values[i].shape != nodes_[i].value->shape || values[i].data != nodes_[i].value->data)
      return false;
  return true;
}

// ---------------------------------------------------------------------------
// record

Tensor record(OpKind kind, std::vector<Tensor> inputs, OpAttrs attrs) {
  if (kind == OpKind::Leaf) throw std::invalid_argument("leaf nodes are created with Tape::variable");
  Tape* tape = nullptr;
  std::vector<const Buffer*> ins;
  ins.reserve(inputs.size());
  for (const auto& t : inputs) {
    if (!t.defined()) throw std::invalid_argument(std::string(op_name(kind)) + ": undefined input");
    if (t.tape()) {
      if (tape && tape != t.tape())
        throw std::invalid_argument(std::string(op_name(kind)) + ": inputs live on different tapes");
      tape = t.tape();
      tape->check_live(t);
    }
    ins.push_back(t.buffer().get());
  }
  auto value = std::make_shared<const Buffer>(evaluate(kind, ins, attrs));
  check_finite(*value, kind);
  if (!tape) return Tensor::constant(value->shape, value->data);
  Node n;
  n.kind = kind;
  if (kind == OpKind::StopGradient) {
    // No recorded parents: nothing flows back through the barrier.
    n.inputs.clear();
  } else {
    n.inputs = std::move(inputs);
  }
  n.attrs = std::move(attrs);
  n.value = std::move(value);
  return tape->push(std::move(n));
}

Tensor record(std::string_view kind, std::vector<Tensor> inputs, OpAttrs attrs) {
  return record(parse_op_kind(kind), std::move(inputs), std::move(attrs));
}

// ---------------------------------------------------------------------------
// Op helpers

Tensor add(const Tensor& a, const Tensor& b) { return record(OpKind::Add, {a, b}); }
Tensor sub(const Tensor& a, const Tensor& b) { return record(OpKind::Sub, {a, b}); }
Tensor mul(const Tensor& a, const Tensor& b) { return record(OpKind::Mul, {a, b}); }
Tensor matmul(const Tensor& a, const Tensor& b) { return record(OpKind::MatMul, {a, b}); }
Tensor relu(const Tensor& a) { return record(OpKind::Relu, {a}); }
Tensor scale(const Tensor& a, double factor) {
  OpAttrs at;
  at.scalar = factor;
  return record(OpKind::ScalarMul, {a}, std::move(at));
}
Tensor sum(const Tensor& a) { return record(OpKind::Sum, {a}); }
Tensor mean(const Tensor& a) { return record(OpKind::Mean, {a}); }
Tensor square(const Tensor& a) { return record(OpKind::Square, {a}); }
Tensor log(const Tensor& a) { return record(OpKind::Log, {a}); }
Tensor softmax(const Tensor& a) { return record(OpKind::Softmax, {a}); }
Tensor reciprocal(const Tensor& a) { return record(OpKind::Reciprocal, {a}); }
Tensor transpose(const Tensor& a) { return record(OpKind::Transpose, {a}); }

Tensor cross_entropy(const Tensor& logits, std::vector<std::size_t> labels, Reduction reduction) {
  OpAttrs at;
  at.labels = std::move(labels);
  at.reduction = reduction;
  return record(OpKind::CrossEntropy, {logits}, std::move(at));
}

Tensor mse(const Tensor& prediction, const Tensor& target, Reduction reduction) {
  OpAttrs at;
  at.reduction = reduction;
  return record(OpKind::Mse, {prediction, target}, std::move(at));
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  OpAttrs at;
  at.begin = begin;
  at.end = end;
  return record(OpKind::Slice, {a}, std::move(at));
}

Tensor index(const Tensor& a, std::size_t row) {
  auto s = slice_rows(a, row, row + 1);
  Shape tail(a.shape().begin() + 1, a.shape().end());
  return reshape(s, std::move(tail));
}

Tensor reshape(const Tensor& a, Shape shape) {
  OpAttrs at;
  at.shape = std::move(shape);
  return record(OpKind::Reshape, {a}, std::move(at));
}

Tensor concat_rows(const std::vector<Tensor>& parts) { return record(OpKind::Concat, parts); }

Tensor expand(const Tensor& scalar, Shape shape) {
  OpAttrs at;
  at.shape = std::move(shape);
  return record(OpKind::Expand, {scalar}, std::move(at));
}

Tensor pad_rows(const Tensor& a, std::size_t begin, std::size_t total_rows) {
  OpAttrs at;
  at.begin = begin;
  at.total_rows = total_rows;
  return record(OpKind::PadRows, {a}, std::move(at));
}

Tensor stop_gradient(const Tensor& t) { return record(OpKind::StopGradient, {t}); }

std::vector<Tensor> sgd_step(std::span<const Tensor> params, std::span<const Tensor> grads,
                             double alpha) {
  if (!(alpha >= 0.0)) throw std::invalid_argument("sgd_step: negative step size");
  if (params.size() != grads.size())
    throw ShapeError("sgd_step: " + std::to_string(params.size()) + " params vs " +
                     std::to_string(grads.size()) + " grads");
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape())
      throw ShapeError("sgd_step: shape mismatch " + shape_string(params[i].shape()) + " vs " +
                       shape_string(grads[i].shape()));
    out.push_back(sub(params[i], scale(grads[i], alpha)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backward rules

namespace {

Tensor ones(Shape s) { return Tensor::filled(std::move(s), 1.0); }

// Sums a (rows, cols) gradient over rows into a (cols,) tensor.
Tensor reduce_rows(const Tensor& g) {
  const auto rows = g.shape()[0], cols = g.shape()[1];
  return reshape(matmul(ones({1, rows}), g), {cols});
}

Tensor broadcast_grad(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  return reduce_rows(g);
}

// Returns one entry per input; undefined entries carry no gradient.
std::vector<Tensor> vjp(const Node& node, const std::vector<Tensor>& in, const Tensor& out,
                        const Tensor& g) {
  const auto& at = node.attrs;
  switch (node.kind) {
    case OpKind::Leaf:
    case OpKind::StopGradient:
      return {};
    case OpKind::Add:
      return {g, broadcast_grad(g, in[1].shape())};
    case OpKind::Sub:
      return {g, broadcast_grad(scale(g, -1.0), in[1].shape())};
    case OpKind::Mul:
      return {mul(g, in[1]), mul(g, in[0])};
    case OpKind::MatMul:
      return {matmul(g, transpose(in[1])), matmul(transpose(in[0]), g)};
    case OpKind::Relu: {
      std::vector<double> mask(in[0].size());
      const auto x = in[0].values();
      for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = x[i] > 0.0 ? 1.0 : 0.0;
      return {mul(g, Tensor::constant(in[0].shape(), std::move(mask)))};
    }
    case OpKind::ScalarMul:
      return {scale(g, at.scalar)};
    case OpKind::Sum:
      return {expand(g, in[0].shape())};
    case OpKind::Mean:
      return {scale(expand(g, in[0].shape()), 1.0 / static_cast<double>(in[0].size()))};
    case OpKind::Square:
      return {scale(mul(g, in[0]), 2.0)};
    case OpKind::Log:
      return {mul(g, reciprocal(in[0]))};
    case OpKind::Reciprocal:
      return {scale(mul(g, square(out)), -1.0)};
    case OpKind::Softmax: {
      const auto& s = out.shape();
      const std::size_t cols = s.back();
      const std::size_t rows = out.size() / cols;
      auto y = reshape(out, {rows, cols});
      auto gy = mul(reshape(g, {rows, cols}), y);
      auto row_sums = matmul(gy, ones({cols, cols}));
      return {reshape(mul(y, sub(reshape(g, {rows, cols}), row_sums)), s)};
    }
    case OpKind::CrossEntropy: {
      const auto& s = in[0].shape();
      std::vector<double> onehot(in[0].size(), 0.0);
      for (std::size_t r = 0; r < s[0]; ++r) onehot[r * s[1] + at.labels[r]] = 1.0;
      auto diff = sub(softmax(in[0]), Tensor::constant(s, std::move(onehot)));
      auto gd = mul(expand(g, s), diff);
      if (at.reduction == Reduction::Mean) gd = scale(gd, 1.0 / static_cast<double>(s[0]));
      return {gd};
    }
    case OpKind::Mse: {
      const auto& s = in[0].shape();
      double c = 1.0;
      if (at.reduction == Reduction::Mean) c /= static_cast<double>(rows_of(s));
      auto gp = scale(mul(expand(g, s), sub(in[0], in[1])), c);
      return {gp, scale(gp, -1.0)};
    }
    case OpKind::Slice:
      return {pad_rows(g, at.begin, in[0].shape()[0])};
    case OpKind::PadRows:
      return {slice_rows(g, at.begin, at.begin + in[0].shape()[0])};
    case OpKind::Reshape:
      return {reshape(g, in[0].shape())};
    case OpKind::Expand:
      return {reshape(sum(g), in[0].shape())};
    case OpKind::Concat: {
      std::vector<Tensor> parts;
      std::size_t row = 0;
      for (const auto& t : in) {
        parts.push_back(slice_rows(g, row, row + t.shape()[0]));
        row += t.shape()[0];
      }
      return parts;
    }
    case OpKind::Transpose:
      return {transpose(g)};
  }
  return {};
}

}  // namespace

std::vector<Tensor> gradient(const Tensor& output, std::span<const Tensor> wrt, bool create_graph) {
  if (!output.defined() || output.size() != 1)
    throw ShapeError("gradient: output must be a scalar");
  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) result.push_back(Tensor::zeros(w.shape()));

  Tape* tape = output.tape();
  if (!tape) return result;
  tape->check_live(output);

  const std::size_t hi = *output.node_id();
  std::size_t lo = hi + 1;
  for (const auto& w : wrt) {
    if (!w.node_id()) continue;
    if (w.tape() != tape) throw std::invalid_argument("gradient: wrt tensor lives on another tape");
    tape->check_live(w);
    lo = std::min(lo, *w.node_id());
  }
  if (lo > hi) return result;

  // Nodes in [lo, hi] that depend on some wrt tensor.
  const std::size_t span_len = hi - lo + 1;
  std::vector<char> relevant(span_len, 0);
  for (const auto& w : wrt)
    if (w.node_id() && *w.node_id() <= hi) relevant[*w.node_id() - lo] = 1;
  for (std::size_t i = lo; i <= hi; ++i) {
    if (relevant[i - lo]) continue;
    for (const auto& p : tape->node(i).inputs)
      if (p.node_id() && *p.node_id() >= lo && relevant[*p.node_id() - lo]) {
        relevant[i - lo] = 1;
        break;
      }
  }
  if (!relevant[hi - lo]) return result;

  std::vector<Tensor> grads(span_len);
  grads[hi - lo] = Tensor::filled(output.shape(), 1.0);

  for (std::size_t i = hi + 1; i-- > lo;) {
    Tensor g = grads[i - lo];
    if (!g.defined() || !relevant[i - lo]) continue;
    // Copy: with create_graph the backward rules append to the tape.
    const Node node = tape->node(i);
    if (node.inputs.empty()) continue;
    std::vector<Tensor> ins;
    Tensor out;
    if (create_graph) {
      ins = node.inputs;
      out = tape->handle(i);
    } else {
      ins.reserve(node.inputs.size());
      for (const auto& t : node.inputs) ins.push_back(t.detach());
      out = Tensor::constant(node.value->shape, node.value->data);
      g = g.detach();
    }
    auto parts = vjp(node, ins, out, g);
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto& p = node.inputs[k];
      if (!parts[k].defined() || !p.node_id() || *p.node_id() < lo) continue;
      const std::size_t pid = *p.node_id();
      if (!relevant[pid - lo]) continue;
      auto& slot = grads[pid - lo];
      slot = slot.defined() ? add(slot, parts[k]) : parts[k];
    }
  }

  for (std::size_t k = 0; k < wrt.size(); ++k) {
    const auto& w = wrt[k];
    if (!w.node_id() || *w.node_id() > hi) continue;
    const auto& g = grads[*w.node_id() - lo];
    if (g.defined()) result[k] = create_graph ? g : g.detach();
  }
  return result;
}

}  // namespace metacl
