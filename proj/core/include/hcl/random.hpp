#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace hcl {

// SplitMix64 finalizer. Used to derive independent, order-free seeds from a
// tuple of counters so that any (seed, task, epoch, step) draw can be
// reproduced without replaying a global generator.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x2545f4914f6cdd1dULL;
  for (auto p : parts) h = mix64(h ^ mix64(p));
  return h;
}

// Uniform double in [0, 1) from a 64-bit hash.
inline double unit_from_hash(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::initializer_list<std::uint64_t> parts) {
  return Rng(derive_seed(parts));
}

}  // namespace hcl
