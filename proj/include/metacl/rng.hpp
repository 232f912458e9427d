#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace metacl {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_label(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

/// Named substream of a root seed: root -> {init, task-sampling, trajectory, head-init, ...}.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) {
  return mix64(root ^ mix64(hash_label(stream)));
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t index) {
  return mix64(derive_seed(root, stream) + mix64(index + 1));
}

inline Rng make_rng(std::uint64_t root, std::string_view stream) { return Rng(derive_seed(root, stream)); }

inline Rng make_rng(std::uint64_t root, std::string_view stream, std::uint64_t index) {
  return Rng(derive_seed(root, stream, index));
}

}  // namespace metacl
