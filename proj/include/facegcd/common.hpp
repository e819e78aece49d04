#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace facegcd {

// Error taxonomy shared by all modules. The CLI maps these onto exit codes.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// FNV-1a, used to derive per-stage / per-sample seeds from one root seed.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view stage) {
  std::uint64_t h = fnv1a(stage);
  h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view stage, std::uint64_t a,
                              std::uint64_t b = 0) {
  std::uint64_t h = mix_seed(seed, stage);
  h ^= a * 0xbf58476d1ce4e5b9ull + 0x94d049bb133111ebull;
  h = (h ^ (h >> 31)) * 0xff51afd7ed558ccdull;
  h ^= b * 0xc4ceb9fe1a85ec53ull + 1;
  return h ^ (h >> 33);
}

inline Rng make_rng(std::uint64_t seed, std::string_view stage) {
  return Rng(mix_seed(seed, stage));
}

inline Rng make_rng(std::uint64_t seed, std::string_view stage, std::uint64_t a,
                    std::uint64_t b = 0) {
  return Rng(mix_seed(seed, stage, a, b));
}

}  // namespace facegcd
