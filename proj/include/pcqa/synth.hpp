#pragma once

#include <cstdint>
#include <filesystem>
#include <random>

#include "pcqa/cloudio.hpp"
#include "pcqa/datapack.hpp"

namespace pcqa {

enum class Primitive { kSphere = 0, kCube, kTorus, kCylinder };

/// Surface samples of a primitive inside [-1,1]^3, colored by one of four
/// patterns (axis gradient, stripes, checkerboard, two-tone hemispheres).
PointCloud make_primitive(Primitive shape, int pattern, int points, std::mt19937_64& rng);

/// Color noise, position jitter and random point dropping, all scaled by
/// severity in [0, 1].
PointCloud distort(const PointCloud& pc, double severity, std::mt19937_64& rng);

/// 5 - 4 * severity.
double pseudo_mos(double severity);

struct SynthOptions {
  int contents = 4;
  int levels = 4;
  int points = 6000;
  std::uint64_t seed = 0;
};

/// Writes PLY files plus manifest.csv into `dir` and returns the manifest.
/// Every sample gets a distinct severity, so MOS has no ties.
Manifest generate_synthetic(const std::filesystem::path& dir, const SynthOptions& options);

}  // namespace pcqa
