#include "metacl/models.hpp"

#include <bit>
#include <cmath>
#include <random>
#include <stdexcept>

namespace metacl {

std::string_view partition_name(Partition p) { return p == Partition::Encoder ? "encoder" : "head"; }

Partition parse_partition(std::string_view name) {
  if (name == "encoder") return Partition::Encoder;
  if (name == "head") return Partition::Head;
  throw std::invalid_argument("unknown partition '" + std::string(name) + "'");
}

std::string_view loss_name(LossKind k) { return k == LossKind::CrossEntropy ? "cross-entropy" : "mse"; }

LossKind parse_loss(std::string_view name) {
  if (name == "cross-entropy" || name == "ce") return LossKind::CrossEntropy;
  if (name == "mse") return LossKind::Mse;
  throw std::invalid_argument("unknown loss kind '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (input_dim == 0 || rep_dim == 0 || output_dim == 0)
    throw std::invalid_argument("model dimensions must be >= 1");
  if (head_depth == 0) throw std::invalid_argument("head_depth must be >= 1");
  for (auto w : encoder_widths)
    if (w == 0) throw std::invalid_argument("encoder widths must be >= 1");
}

// ---------------------------------------------------------------------------
// ParamSet

ParamSet::ParamSet(std::vector<ParamEntry> entries, std::optional<ModelConfig> config)
    : entries_(std::move(entries)), config_(std::move(config)) {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    for (std::size_t j = i + 1; j < entries_.size(); ++j)
      if (entries_[i].name == entries_[j].name)
        throw std::invalid_argument("duplicate parameter name '" + entries_[i].name + "'");
}

std::size_t ParamSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

const Tensor& ParamSet::get(std::string_view name) const { return entries_[index_of(name)].value; }

std::vector<Tensor> ParamSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.value);
  return out;
}

std::vector<Tensor> ParamSet::tensors(Partition p) const {
  std::vector<Tensor> out;
  for (const auto& e : entries_)
    if (e.partition == p) out.push_back(e.value);
  return out;
}

std::vector<std::size_t> ParamSet::indices(Partition p) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].partition == p) out.push_back(i);
  return out;
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

ParamSet ParamSet::with_values(std::vector<Tensor> values) const {
  if (values.size() != entries_.size()) throw ShapeError("with_values: count mismatch");
  std::vector<std::size_t> all(entries_.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return with_values(all, std::move(values));
}

ParamSet ParamSet::with_values(const std::vector<std::size_t>& positions,
                               std::vector<Tensor> values) const {
  if (positions.size() != values.size()) throw ShapeError("with_values: count mismatch");
  ParamSet out = *this;
  for (std::size_t k = 0; k < positions.size(); ++k) {
    auto& e = out.entries_.at(positions[k]);
    if (e.value.shape() != values[k].shape())
      throw ShapeError("with_values: shape mismatch for '" + e.name + "'");
    e.value = std::move(values[k]);
  }
  return out;
}

ParamSet ParamSet::attach(Tape& tape) const {
  ParamSet out = *this;
  for (auto& e : out.entries_) e.value = tape.variable(e.value);
  return out;
}

ParamSet ParamSet::detach() const {
  ParamSet out = *this;
  for (auto& e : out.entries_) e.value = e.value.detach();
  return out;
}

ParamSet ParamSet::with_head_from(const ParamSet& other) const {
  ParamSet out = *this;
  for (auto& e : out.entries_) {
    if (e.partition != Partition::Head) continue;
    const auto& v = other.get(e.name);
    if (v.shape() != e.value.shape()) throw ShapeError("with_head_from: shape mismatch for '" + e.name + "'");
    e.value = v;
  }
  return out;
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& e : entries_) {
    for (char c : e.name) mix(static_cast<unsigned char>(c));
    for (auto d : e.value.shape()) mix(d);
    for (double v : e.value.values()) mix(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

// ---------------------------------------------------------------------------
// Construction

namespace {

void add_layer(std::vector<ParamEntry>& out, const std::string& prefix, std::size_t fan_in,
               std::size_t fan_out, Partition part, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> w(fan_in * fan_out);
  for (auto& v : w) v = u(rng);
  out.push_back({prefix + ".weight", part, Tensor::constant({fan_in, fan_out}, std::move(w))});
  out.push_back({prefix + ".bias", part, Tensor::zeros({fan_out})});
}

std::size_t layer_count(const ParamSet& p, std::string_view prefix) {
  std::size_t n = 0;
  while (true) {
    const auto name = std::string(prefix) + "." + std::to_string(n) + ".weight";
    bool found = false;
    for (const auto& e : p.entries())
      if (e.name == name) found = true;
    if (!found) return n;
    ++n;
  }
}

// Bias is optional so hand-built parameter sets can describe bias-free layers.
Tensor dense(const ParamSet& p, const std::string& prefix, const Tensor& x) {
  const Tensor y = matmul(x, p.get(prefix + ".weight"));
  const std::string bias = prefix + ".bias";
  for (const auto& e : p.entries())
    if (e.name == bias) return add(y, e.value);
  return y;
}

}  // namespace

ParamSet init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::vector<ParamEntry> entries;
  std::size_t width = config.input_dim;
  std::size_t layer = 0;
  for (auto w : config.encoder_widths) {
    add_layer(entries, "encoder." + std::to_string(layer++), width, w, Partition::Encoder, rng);
    width = w;
  }
  add_layer(entries, "encoder." + std::to_string(layer), width, config.rep_dim, Partition::Encoder, rng);
  width = config.rep_dim;
  for (std::size_t h = 0; h + 1 < config.head_depth; ++h) {
    add_layer(entries, "head." + std::to_string(h), width, config.rep_dim, Partition::Head, rng);
  }
  add_layer(entries, "head." + std::to_string(config.head_depth - 1), width, config.output_dim,
            Partition::Head, rng);
  return ParamSet(std::move(entries), config);
}

Tensor encode(const ParamSet& params, const Tensor& x) {
  const std::size_t layers = layer_count(params, "encoder");
  if (layers == 0) return x;
  const auto& w0 = params.get("encoder.0.weight");
  if (x.rank() != 2 || x.shape()[1] != w0.shape()[0])
    throw ShapeError("encode: input " + shape_string(x.shape()) + " does not match input dim " +
                     std::to_string(w0.shape()[0]));
  const bool output_relu = !params.config() || params.config()->encoder_output_relu;
  Tensor h = x;
  for (std::size_t l = 0; l < layers; ++l) {
    h = dense(params, "encoder." + std::to_string(l), h);
    if (l + 1 < layers || output_relu) h = relu(h);
  }
  return h;
}

Tensor head_logits(const ParamSet& params, const Tensor& features) {
  const std::size_t layers = layer_count(params, "head");
  if (layers == 0) throw std::invalid_argument("parameter set has no head");
  Tensor h = features;
  for (std::size_t l = 0; l < layers; ++l) {
    h = dense(params, "head." + std::to_string(l), h);
    if (l + 1 < layers) h = relu(h);
  }
  return h;
}

Tensor logits(const ParamSet& params, const Tensor& x) { return head_logits(params, encode(params, x)); }

Tensor loss_from_outputs(const Tensor& outputs, const Targets& y, LossKind kind, Reduction reduction) {
  if (kind == LossKind::CrossEntropy) {
    if (const auto* labels = std::get_if<std::vector<std::size_t>>(&y))
      return cross_entropy(outputs, *labels, reduction);
    const auto& dense_y = std::get<Tensor>(y);
    if (dense_y.shape() != outputs.shape())
      throw ShapeError("predict_loss: one-hot targets " + shape_string(dense_y.shape()) +
                       " vs outputs " + shape_string(outputs.shape()));
    return cross_entropy(outputs, argmax_rows(dense_y), reduction);
  }
  if (const auto* t = std::get_if<Tensor>(&y)) return mse(outputs, *t, reduction);
  const auto& labels = std::get<std::vector<std::size_t>>(y);
  const auto& s = outputs.shape();
  if (s.size() != 2 || labels.size() != s[0]) throw ShapeError("predict_loss: label count mismatch");
  std::vector<double> onehot(outputs.size(), 0.0);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= s[1]) throw std::out_of_range("predict_loss: label out of range");
    onehot[r * s[1] + labels[r]] = 1.0;
  }
  return mse(outputs, Tensor::constant(s, std::move(onehot)), reduction);
}

Tensor predict_loss(const ParamSet& params, const Tensor& x, const Targets& y, LossKind kind,
                    Reduction reduction) {
  return loss_from_outputs(logits(params, x), y, kind, reduction);
}

std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  if (scores.rank() != 2) throw ShapeError("argmax_rows expects rank 2");
  const std::size_t rows = scores.shape()[0], cols = scores.shape()[1];
  const auto v = scores.values();
  std::vector<std::size_t> out(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c)
      if (v[r * cols + c] > v[r * cols + best]) best = c;
    out[r] = best;
  }
  return out;
}

double accuracy_from_logits(const Tensor& scores, const std::vector<std::size_t>& labels) {
  const auto pred = argmax_rows(scores);
  if (pred.size() != labels.size())
    throw ShapeError("accuracy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(pred.size()) + " rows");
  if (pred.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

double accuracy(const ParamSet& params, const Tensor& x, const std::vector<std::size_t>& labels) {
  return accuracy_from_logits(logits(params.detach(), x.detach()), labels);
}

}  // namespace metacl
