#pragma once

#include <cstdint>
#include <random>

namespace freqgrl {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent streams derived from one master seed.
enum class Stream : std::uint64_t {
  Init = 1,
  SourceEpisodes = 2,
  TargetEpisodes = 3,
  Lfr = 4,
  Eval = 5,
  Data = 6,
  Probe = 7,
};

inline Rng derive_rng(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
  std::uint64_t s = splitmix64(seed);
  s = splitmix64(s ^ static_cast<std::uint64_t>(stream));
  s = splitmix64(s ^ index);
  return Rng(s);
}

}  // namespace freqgrl
