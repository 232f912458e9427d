#pragma once

// Parameter checkpoints: a versioned JSON document mapping each parameter
// name to its partition tag, shape and row-major values. Doubles are written
// in shortest round-trip form, so save -> load is bit-exact.

#include <filesystem>
#include <map>
#include <string>

#include "metacl/models.hpp"

namespace metacl {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ParamSet params;
  // Free-form run metadata (objective, inner lr, iteration, ...).
  std::map<std::string, std::string> metadata;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string checkpoint_to_string(const Checkpoint& ckpt);
Checkpoint checkpoint_from_string(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// True when names, partitions and shapes agree entry by entry.
bool structurally_compatible(const ParamSet& a, const ParamSet& b);

}  // namespace metacl
