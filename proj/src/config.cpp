#include "metacl/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "metacl/rng.hpp"

namespace metacl {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) throw ConfigError("key '" + key + "': not a number: '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) throw ConfigError("key '" + key + "': not a non-negative integer: '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "': not a boolean: '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

template <class F>
Setter wrap(F f) {
  return [f](RunConfig& c, const std::string& k, const std::string& v) {
    try {
      f(c, k, v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("key '" + k + "': " + e.what());
    }
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", wrap([](RunConfig& c, auto& k, auto& v) { c.seed = to_uint(k, v); })},
      {"out_dir", wrap([](RunConfig& c, auto&, auto& v) { c.out_dir = v; })},

      {"data.source", wrap([](RunConfig& c, auto& k, auto& v) {
         if (v == "gaussian") c.data.source = DataSource::Gaussian;
         else if (v == "omniglot") c.data.source = DataSource::Omniglot;
         else throw ConfigError("key '" + k + "': expected gaussian or omniglot");
       })},
      {"data.omniglot_root", wrap([](RunConfig& c, auto&, auto& v) { c.data.omniglot_root = v; })},
      {"data.image_size", wrap([](RunConfig& c, auto& k, auto& v) { c.data.image_size = to_uint(k, v); })},
      {"data.input_dim", wrap([](RunConfig& c, auto& k, auto& v) { c.data.input_dim = to_uint(k, v); })},
      {"data.train_classes", wrap([](RunConfig& c, auto& k, auto& v) { c.data.train_classes = to_uint(k, v); })},
      {"data.test_classes", wrap([](RunConfig& c, auto& k, auto& v) { c.data.test_classes = to_uint(k, v); })},
      {"data.classes_per_task", wrap([](RunConfig& c, auto& k, auto& v) { c.data.classes_per_task = to_uint(k, v); })},
      {"data.shots", wrap([](RunConfig& c, auto& k, auto& v) { c.data.shots = to_uint(k, v); })},
      {"data.separation", wrap([](RunConfig& c, auto& k, auto& v) { c.data.separation = to_double(k, v); })},
      {"data.spread", wrap([](RunConfig& c, auto& k, auto& v) { c.data.spread = to_double(k, v); })},
      {"data.seed", wrap([](RunConfig& c, auto& k, auto& v) { c.data.seed = to_uint(k, v); })},

      {"model.encoder_widths", wrap([](RunConfig& c, auto& k, auto& v) {
         c.model.encoder_widths.clear();
         for (const auto& w : split_list(v)) c.model.encoder_widths.push_back(to_uint(k, w));
       })},
      {"model.rep_dim", wrap([](RunConfig& c, auto& k, auto& v) { c.model.rep_dim = to_uint(k, v); })},
      {"model.head_depth", wrap([](RunConfig& c, auto& k, auto& v) { c.model.head_depth = to_uint(k, v); })},
      {"model.encoder_output_relu", wrap([](RunConfig& c, auto& k, auto& v) { c.model.encoder_output_relu = to_bool(k, v); })},

      {"meta.inner_lr_maml", wrap([](RunConfig& c, auto& k, auto& v) { c.inner_lr_maml = to_double(k, v); })},
      {"meta.inner_lr_mrcl", wrap([](RunConfig& c, auto& k, auto& v) { c.inner_lr_mrcl = to_double(k, v); })},
      {"meta.meta_lr", wrap([](RunConfig& c, auto& k, auto& v) { c.meta.meta_lr = to_double(k, v); })},
      {"meta.inner_steps", wrap([](RunConfig& c, auto& k, auto& v) { c.meta.inner_steps = to_uint(k, v); })},
      {"meta.truncation", wrap([](RunConfig& c, auto& k, auto& v) { c.meta.truncation = to_uint(k, v); })},
      {"meta.maml_ways", wrap([](RunConfig& c, auto& k, auto& v) { c.meta.maml_ways = to_uint(k, v); })},
      {"meta.partition", wrap([](RunConfig& c, auto&, auto& v) { c.meta.partition = parse_partition_mode(v); })},
      {"meta.iterations", wrap([](RunConfig& c, auto& k, auto& v) { c.meta.iterations = to_uint(k, v); })},
      {"meta.checkpoint_every", wrap([](RunConfig& c, auto& k, auto& v) { c.checkpoint_every = to_uint(k, v); })},
      {"meta.first_order", wrap([](RunConfig& c, auto& k, auto& v) { c.meta.first_order = to_bool(k, v); })},
      {"meta.adam_beta1", wrap([](RunConfig& c, auto& k, auto& v) { c.meta.adam.beta1 = to_double(k, v); })},
      {"meta.adam_beta2", wrap([](RunConfig& c, auto& k, auto& v) { c.meta.adam.beta2 = to_double(k, v); })},
      {"meta.adam_eps", wrap([](RunConfig& c, auto& k, auto& v) { c.meta.adam.eps = to_double(k, v); })},

      {"eval.head_lr", wrap([](RunConfig& c, auto& k, auto& v) {
         if (v == "auto") c.eval_head_lr.reset();
         else c.eval_head_lr = to_double(k, v);
       })},
      {"eval.tasks", wrap([](RunConfig& c, auto& k, auto& v) { c.eval.tasks = to_uint(k, v); })},
      {"eval.test_samples_per_class", wrap([](RunConfig& c, auto& k, auto& v) { c.eval.test_samples_per_class = to_uint(k, v); })},
      {"eval.iid_epochs", wrap([](RunConfig& c, auto& k, auto& v) { c.eval.iid_epochs = to_uint(k, v); })},

      {"sweep.lrs", wrap([](RunConfig& c, auto& k, auto& v) {
         c.sweep_lrs.clear();
         for (const auto& s : split_list(v)) c.sweep_lrs.push_back(to_double(k, s));
       })},
      {"sweep.tasks", wrap([](RunConfig& c, auto& k, auto& v) { c.sweep_tasks = to_uint(k, v); })},
      {"sweep.iterations", wrap([](RunConfig& c, auto& k, auto& v) { c.sweep_iterations = to_uint(k, v); })},
  };
  return table;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second(cfg, key, value);
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string default_config_text() {
  return R"(# Desk-scale preset: synthetic Gaussian class-incremental benchmark.
seed = 0
out_dir = out

data.source = gaussian
data.input_dim = 8
data.train_classes = 60
data.test_classes = 40
data.classes_per_task = 10
data.shots = 5
data.separation = 4
data.spread = 0.5
data.seed = 0

model.encoder_widths = 64
model.rep_dim = 64
model.head_depth = 1
model.encoder_output_relu = true

meta.inner_lr_maml = 0.5
meta.inner_lr_mrcl = 0.03
meta.meta_lr = 0.001
meta.inner_steps = 5
meta.truncation = 5
meta.maml_ways = 5
meta.partition = encoder-only
meta.iterations = 10000
meta.checkpoint_every = 2000
meta.first_order = false

eval.head_lr = auto
eval.tasks = 50
eval.test_samples_per_class = 5
eval.iid_epochs = 3

sweep.tasks = 50
sweep.iterations = 2000
)";
}

void validate_run_config(const RunConfig& cfg) {
  try {
    cfg.meta.validate();
    cfg.eval.validate();
    model_config(cfg).validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (cfg.inner_lr_maml < 0.0 || cfg.inner_lr_mrcl < 0.0) throw ConfigError("inner learning rates must be >= 0");
  if (cfg.eval_head_lr && !(*cfg.eval_head_lr > 0.0)) throw ConfigError("eval.head_lr must be > 0");
  for (double lr : cfg.sweep_lrs)
    if (!(lr > 0.0)) throw ConfigError("sweep.lrs entries must be > 0");
  if (cfg.sweep_tasks == 0) throw ConfigError("sweep.tasks must be >= 1");
  const auto& d = cfg.data;
  if (d.classes_per_task == 0 || d.shots == 0) throw ConfigError("data.classes_per_task and data.shots must be >= 1");
  if (d.train_classes < d.classes_per_task || d.test_classes < d.classes_per_task)
    throw ConfigError("each class split must hold at least data.classes_per_task classes");
  if (d.source == DataSource::Omniglot) {
    std::string root = d.omniglot_root;
    if (root.empty())
      if (const char* env = std::getenv("METACL_OMNIGLOT_ROOT")) root = env;
    if (root.empty()) throw ConfigError("data.source = omniglot needs data.omniglot_root or METACL_OMNIGLOT_ROOT");
    if (!std::filesystem::exists(root)) throw ConfigError("omniglot root does not exist: " + root);
  }
}

Benchmark make_benchmark(const RunConfig& cfg) {
  const auto& d = cfg.data;
  if (d.source == DataSource::Gaussian) {
    GaussianSpec spec;
    spec.input_dim = d.input_dim;
    spec.train_classes = d.train_classes;
    spec.test_classes = d.test_classes;
    spec.classes_per_task = d.classes_per_task;
    spec.shots = d.shots;
    spec.separation = d.separation;
    spec.spread = d.spread;
    spec.seed = d.seed;
    return make_gaussian_benchmark(spec);
  }
  std::string root = d.omniglot_root;
  if (root.empty())
    if (const char* env = std::getenv("METACL_OMNIGLOT_ROOT")) root = env;
  OmniglotOptions opt;
  opt.image_size = d.image_size;
  opt.train_classes = d.train_classes;
  opt.test_classes = d.test_classes;
  opt.classes_per_task = d.classes_per_task;
  opt.shots = d.shots;
  return load_omniglot(root, opt);
}

ModelConfig model_config(const RunConfig& cfg) {
  ModelConfig m = cfg.model;
  m.input_dim = cfg.data.source == DataSource::Gaussian ? cfg.data.input_dim
                                                        : cfg.data.image_size * cfg.data.image_size;
  m.output_dim = cfg.data.classes_per_task;
  return m;
}

MetaConfig meta_config(const RunConfig& cfg, Objective objective) {
  MetaConfig m = cfg.meta;
  m.inner_lr = objective == Objective::Maml ? cfg.inner_lr_maml : cfg.inner_lr_mrcl;
  m.seed = derive_seed(cfg.seed, "meta");
  return m;
}

EvalProtocol eval_protocol(const RunConfig& cfg) {
  EvalProtocol p = cfg.eval;
  p.seed = derive_seed(cfg.seed, "eval");
  if (cfg.eval_head_lr) p.head_lr = *cfg.eval_head_lr;
  return p;
}

std::uint64_t init_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, "init"); }

}  // namespace metacl
