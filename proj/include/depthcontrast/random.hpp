#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dc {

using Stream = std::mt19937_64;

/// Mixes a run seed with any number of indices (epoch, sample, role...) into
/// an independent stream seed. Used so per-sample randomness is replayable
/// regardless of iteration order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  for (std::uint64_t k : keys) h = mix(h ^ mix(k));
  return h;
}

inline Stream derive_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  return Stream(derive_seed(seed, keys));
}

}  // namespace dc
