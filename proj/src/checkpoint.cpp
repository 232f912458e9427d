#include "metacl/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace metacl {

using nlohmann::json;

namespace {

json config_to_json(const ModelConfig& c) {
  return json{{"input_dim", c.input_dim},
              {"encoder_widths", c.encoder_widths},
              {"rep_dim", c.rep_dim},
              {"output_dim", c.output_dim},
              {"head_depth", c.head_depth},
              {"encoder_output_relu", c.encoder_output_relu}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.encoder_widths = j.at("encoder_widths").get<std::vector<std::size_t>>();
  c.rep_dim = j.at("rep_dim").get<std::size_t>();
  c.output_dim = j.at("output_dim").get<std::size_t>();
  c.head_depth = j.at("head_depth").get<std::size_t>();
  c.encoder_output_relu = j.at("encoder_output_relu").get<bool>();
  c.validate();
  return c;
}

}  // namespace

std::string checkpoint_to_string(const Checkpoint& ckpt) {
  json params = json::array();
  for (const auto& e : ckpt.params.entries()) {
    const auto v = e.value.values();
    params.push_back({{"name", e.name},
                      {"partition", partition_name(e.partition)},
                      {"shape", e.value.shape()},
                      {"values", std::vector<double>(v.begin(), v.end())}});
  }
  json doc{{"format", "metacl-checkpoint"}, {"version", kCheckpointVersion}, {"params", params}};
  if (ckpt.params.config()) doc["model"] = config_to_json(*ckpt.params.config());
  doc["metadata"] = ckpt.metadata;
  return doc.dump(1) + "\n";
}

Checkpoint checkpoint_from_string(const std::string& text) {
  try {
    const json doc = json::parse(text);
    if (doc.at("format").get<std::string>() != "metacl-checkpoint")
      throw CheckpointError("not a metacl checkpoint");
    const int version = doc.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    std::vector<ParamEntry> entries;
    for (const auto& p : doc.at("params")) {
      auto shape = p.at("shape").get<Shape>();
      auto values = p.at("values").get<std::vector<double>>();
      entries.push_back({p.at("name").get<std::string>(),
                         parse_partition(p.at("partition").get<std::string>()),
                         Tensor::constant(std::move(shape), std::move(values))});
    }
    std::optional<ModelConfig> config;
    if (doc.contains("model")) config = config_from_json(doc.at("model"));
    Checkpoint ckpt{ParamSet(std::move(entries), config), {}};
    if (doc.contains("metadata")) ckpt.metadata = doc.at("metadata").get<std::map<std::string, std::string>>();
    return ckpt;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out << checkpoint_to_string(ckpt);
  if (!out) throw CheckpointError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

bool structurally_compatible(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].name != b[i].name || a[i].partition != b[i].partition ||
        a[i].value.shape() != b[i].value.shape())
      return false;
  return true;
}

}  // namespace metacl
