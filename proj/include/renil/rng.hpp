#pragma once

#include <cstdint>
#include <random>

namespace renil {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Counter-based child seed: independent streams per (seed, index, salt).
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index,
                                           std::uint64_t salt = 0) {
  return splitmix64(splitmix64(seed ^ splitmix64(salt)) + index);
}

using Rng = std::mt19937_64;

}  // namespace renil
