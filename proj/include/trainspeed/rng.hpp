#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace trainspeed {

using Rng = std::mt19937_64;

/// Derives an independent seed for a named sub-stream ("sim", "split",
/// "init", "dropout", "sampler", ...) of a root seed. FNV-1a over the name,
/// mixed with the root through splitmix64, so results do not depend on the
/// standard library's std::hash.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = root ^ h;
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t root, std::string_view stream) {
  return Rng(derive_seed(root, stream));
}

/// Uniform double in [0, 1) using the top 53 bits; identical across
/// standard library implementations, unlike std::uniform_real_distribution.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace trainspeed

namespace trainspeed {

/// Standard normal variate by Box-Muller on uniform01; portable across
/// standard libraries.
inline double standard_normal(Rng& rng) {
  constexpr double two_pi = 6.283185307179586476925;
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

}  // namespace trainspeed
