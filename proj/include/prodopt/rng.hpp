#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace prodopt {

// Uniform double in [0, 1) built from the top 53 bits of the generator
// output; avoids distribution objects so streams are identical across
// standard libraries.
inline double unit_double(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(double lo, double hi, std::mt19937_64& rng) {
  return lo + (hi - lo) * unit_double(rng);
}

// Standard normal via Box-Muller on two uniform draws.
inline double gaussian(std::mt19937_64& rng) {
  double u = unit_double(rng);
  while (u <= 0.0) u = unit_double(rng);
  const double v = unit_double(rng);
  return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586476925287 * v);
}

}  // namespace prodopt
