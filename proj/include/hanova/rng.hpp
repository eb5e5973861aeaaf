#pragma once

#include <cstdint>
#include <random>

namespace hanova {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Independent, reproducible stream for (master seed, stream index).
inline std::mt19937_64 make_rng(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t s = master;
  std::uint64_t a = splitmix64(s);
  s ^= stream * 0xD1B54A32D192ED03ULL + 0x2545F4914F6CDD1DULL;
  std::uint64_t b = splitmix64(s);
  std::mt19937_64 rng(a ^ (b + 0x632BE59BD9B4E019ULL));
  rng.discard(8);
  return rng;
}

}  // namespace hanova
