#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pcqa/cloudio.hpp"

namespace pcqa {

/// Planar (channel-major) image of doubles.
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  bool same_size(const Image& o) const { return height == o.height && width == o.width; }
  bool operator==(const Image&) const = default;
};

inline constexpr int kNumViews = 6;

/// View order: +x, +y, +z, -x, -y, -z. Camera for view "+a" sits on the +a
/// side looking towards -a.
enum class View : int { kPosX = 0, kPosY, kPosZ, kNegX, kNegY, kNegZ };
const char* view_name(int view);

/// Six orthographic projections of one cloud.
struct ViewSet {
  std::array<Image, kNumViews> texture;    // 3 x H x W in [0,1]
  std::array<Image, kNumViews> depth;      // 1 x H x W in [0,1], 0 = background
  std::array<Image, kNumViews> occupancy;  // 1 x H x W in {0,1}
  std::array<double, kNumViews> ratios{};  // mean occupancy per view

  int height() const { return texture[0].height; }
  int width() const { return texture[0].width; }
  bool operator==(const ViewSet&) const = default;
};

/// 2 x 3 mosaic; row 0 holds +x,+y,+z and row 1 holds -x,-y,-z.
struct StitchedInput {
  Image image;      // 4 x 2H x 3W: texture RGB then depth
  Image occupancy;  // 1 x 2H x 3W
};

struct RenderSettings {
  int resolution = 512;
  /// Splat radius in normalized device units (image spans [-1,1]). Raised to
  /// 0.75 pixel pitch when smaller so every point covers a pixel center.
  double splat_radius = 0.01;
  int points_per_pixel = 8;

  std::uint64_t hash() const;
};

/// Near-to-far depth mapping: nearest occupied pixel in a view maps to 1,
/// the farthest to this value; background stays 0.
inline constexpr double kFarDepth = 1.0 / 255.0;

ViewSet project_views(const PointCloud& canonical_cloud, const RenderSettings& settings);

double occupancy_ratio(const Image& occupancy);

StitchedInput stitch(const ViewSet& views);
ViewSet unstitch(const StitchedInput& stitched);

/// Throws unless all views share one resolution and the channel counts and
/// ratios are consistent.
void check_view_set(const ViewSet& views);

}  // namespace pcqa
