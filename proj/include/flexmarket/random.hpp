#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace flexmarket {

// Thin wrappers around mt19937_64 that do not go through the standard
// <random> distributions, so streams are identical across standard library
// implementations. Every seeded run of the library draws only through these.

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {  // inclusive
  return lo + static_cast<int>(rng() % static_cast<uint64_t>(hi - lo + 1));
}

inline double gaussian(std::mt19937_64& rng) {
  // Box-Muller; one value per call keeps the stream easy to reason about.
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
}

}  // namespace flexmarket
