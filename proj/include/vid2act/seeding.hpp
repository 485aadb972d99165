#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string_view>

#include "vid2act/errors.hpp"

namespace vid2act {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Derives independent generators from one root seed. Each consumer asks for a
/// named substream ("env", "sampler", "init/world_model", ...), so adding a new
/// consumer never shifts the draws seen by existing ones.
class Seeder {
 public:
  Seeder() = default;
  explicit Seeder(std::uint64_t root) { seed(root); }

  // Seeding is once-only; a second call mid-run is rejected.
  void seed(std::uint64_t root) {
    if (root_) throw ContractError("Seeder: already seeded; reseeding mid-run is not allowed");
    root_ = root;
  }

  bool seeded() const { return root_.has_value(); }
  std::uint64_t root() const {
    if (!root_) throw ContractError("Seeder: not seeded");
    return *root_;
  }

  std::uint64_t substream_seed(std::string_view name) const {
    return splitmix64(root() ^ splitmix64(fnv1a(name)));
  }

  Rng stream(std::string_view name) const {
    const std::uint64_t s = substream_seed(name);
    std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
    return Rng(seq);
  }

 private:
  std::optional<std::uint64_t> root_;
};

}  // namespace vid2act
