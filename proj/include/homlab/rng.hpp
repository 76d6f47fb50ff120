#pragma once

// =============================================================================
// Counter-based random numbers.
//
// Reproducibility contract: every random quantity in the library is a pure
// function of (seed, stream, counter). There is no mutable generator state,
// so results are independent of evaluation order and of how samples are
// distributed over worker threads. The mixer is the splitmix64 finalizer
// applied to a combination of the three keys.
// =============================================================================

#include <cmath>
#include <cstdint>
#include <utility>

namespace homlab {

namespace rng {

/// splitmix64 finalizer: a bijective avalanche mix on 64-bit words.
inline std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// One 64-bit word keyed by (seed, stream, counter).
inline std::uint64_t word(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  std::uint64_t z = mix(seed);
  z = mix(z ^ 0xd1b54a32d192ed03ULL ^ stream);
  z = mix(z ^ 0x8cb92ba72f3d8dd7ULL ^ counter);
  return z;
}

/// Uniform double in (0, 1]: 53 mantissa bits, never exactly zero so that
/// log(u) below is always finite.
inline double uniform_open(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  return double((word(seed, stream, counter) >> 11) + 1) * 0x1.0p-53;
}

/// A pair of independent standard normals via Box-Muller. Deterministic in
/// (seed, stream, counter); consumes counters 2c and 2c+1 internally.
inline std::pair<double, double> normal_pair(std::uint64_t seed, std::uint64_t stream,
                                             std::uint64_t counter) {
  const double u1 = uniform_open(seed, stream, 2 * counter);
  const double u2 = uniform_open(seed, stream, 2 * counter + 1);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double t = 2.0 * 3.14159265358979323846 * u2;
  return {r * std::cos(t), r * std::sin(t)};
}

}  // namespace rng

}  // namespace homlab
