#pragma once

/// @file
/// @brief Seeded synthetic road profile: a sum of raised-cosine bumps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "gnoc/timegrid.hpp"

namespace gnoc {

struct RoadProfileSpec {
  std::uint64_t seed = 7;
  std::size_t bump_count = 60;
  double amplitude_min = 0.005;  // m
  double amplitude_max = 0.05;   // m
  double width_min = 0.05;       // s
  double width_max = 0.15;       // s
  /// Randomly flip the sign of each bump (potholes).
  bool allow_negative = true;

  void validate() const {
    if (!(amplitude_min >= 0.0 && amplitude_max >= amplitude_min))
      throw InvalidArgument("road profile: need 0 <= amplitude_min <= amplitude_max");
    if (!(width_min > 0.0 && width_max >= width_min))
      throw InvalidArgument("road profile: need 0 < width_min <= width_max");
  }
};

struct Bump {
  double start;
  double width;
  double amplitude;
};

/// Draws the bumps. Uses only the raw 64-bit engine output so the profile is
/// identical across standard libraries.
inline std::vector<Bump> draw_bumps(const RoadProfileSpec& spec, const TimeGrid& grid) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  auto unit = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  std::vector<Bump> bumps;
  bumps.reserve(spec.bump_count);
  for (std::size_t i = 0; i < spec.bump_count; ++i) {
    const double w = spec.width_min + (spec.width_max - spec.width_min) * unit();
    const double start = grid.t0() + (grid.length() - w) * unit();
    double a = spec.amplitude_min + (spec.amplitude_max - spec.amplitude_min) * unit();
    const double flip = unit();
    if (spec.allow_negative && flip < 0.5) a = -a;
    bumps.push_back(Bump{start, w, a});
  }
  return bumps;
}

/// Road height at the grid nodes. Overlapping bumps are summed and the result
/// clipped to +-amplitude_max.
inline GridSignal road_profile(const RoadProfileSpec& spec, const TimeGrid& grid) {
  const auto bumps = draw_bumps(spec, grid);
  return GridSignal::from_function(grid, 1, [&](double t) {
    double z = 0.0;
    for (const auto& b : bumps) {
      const double s = (t - b.start) / b.width;
      if (s > 0.0 && s < 1.0) z += 0.5 * b.amplitude * (1.0 - std::cos(2.0 * std::numbers::pi * s));
    }
    z = std::clamp(z, -spec.amplitude_max, spec.amplitude_max);
    return Vector::Constant(1, z);
  });
}

}  // namespace gnoc
