#pragma once

#include <array>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcqa {

/// Raised for malformed input files; the message names the offending line
/// or byte position.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Vec3 = std::array<double, 3>;

/// Colored point set. Colors are in [0,1].
struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> colors;
  std::string name;

  std::size_t size() const { return positions.size(); }
};

/// Throws std::invalid_argument unless the cloud is non-empty, finite and
/// its colors lie in [0,1].
void validate(const PointCloud& pc);

enum class PlyFormat { kAscii, kBinaryLittleEndian };

/// Reads the vertex element of an ASCII or binary little-endian PLY file.
/// Colors come from uchar/ushort red,green,blue (rescaled) or float r,g,b.
PointCloud load_ply(const std::filesystem::path& path);

/// Writes double x,y,z and uchar red,green,blue. Colors are quantized to
/// 1/255 steps.
void write_ply(const PointCloud& pc, const std::filesystem::path& path,
               PlyFormat format = PlyFormat::kBinaryLittleEndian);

/// Centers the bounding box at the origin and scales uniformly so the longest
/// axis spans [-1, 1].
PointCloud canonicalize(const PointCloud& pc);

/// Axis-aligned bounding box extents (max - min) per axis.
Vec3 extents(const PointCloud& pc);

}  // namespace pcqa
