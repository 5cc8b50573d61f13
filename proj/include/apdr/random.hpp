#pragma once

// Portable sampling on top of std::mt19937_64. The standard distributions are
// implementation-defined, so everything that must replay bit-identically from
// a seed goes through these helpers instead.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "apdr/errors.hpp"

namespace apdr {

using Rng = std::mt19937_64;

// Uniform in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) { return double(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Unbiased integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  const std::uint64_t range = n;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % range;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return std::size_t(x % range);
}

inline double normal(Rng& rng) {
  double u1;
  do {
    u1 = uniform01(rng);
  } while (u1 <= 0.0);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <class It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = std::size_t(last - first);
  for (std::size_t i = n; i > 1; --i) std::swap(first[i - 1], first[uniform_index(rng, i)]);
}

inline std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void set_rng_state(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw LoadError("corrupt random generator state");
}

}  // namespace apdr
