#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>

namespace opsig {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Uniform integer in [0, bound) from one draw. Unlike the standard
// distributions the result does not depend on the library implementation.
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t bound) {
  return static_cast<std::size_t>((static_cast<unsigned __int128>(rng()) * bound) >> 64);
}

inline double uniform_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename It>
void portable_shuffle(It first, It last, std::mt19937_64& rng) {
  auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) {
    using std::swap;
    swap(first[i - 1], first[uniform_index(rng, i)]);
  }
}

}  // namespace opsig
