#include "pcqa/projector.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace pcqa {

namespace {

struct Camera {
  Vec3 forward;
  Vec3 right;
  Vec3 up;
};

// right = forward x up for every camera; the ±z cameras use +y as up.
constexpr std::array<Camera, kNumViews> kCameras{{
    {{-1, 0, 0}, {0, 1, 0}, {0, 0, 1}},   // +x
    {{0, -1, 0}, {-1, 0, 0}, {0, 0, 1}},  // +y
    {{0, 0, -1}, {1, 0, 0}, {0, 1, 0}},   // +z
    {{1, 0, 0}, {0, -1, 0}, {0, 0, 1}},   // -x
    {{0, 1, 0}, {1, 0, 0}, {0, 0, 1}},    // -y
    {{0, 0, 1}, {-1, 0, 0}, {0, 1, 0}},   // -z
}};

// Distance from the camera plane to the origin.
constexpr double kCameraDistance = 2.0;

double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

struct Splat {
  double depth;
  std::uint32_t index;
  double alpha;
};

bool nearer(const Splat& a, const Splat& b) {
  return a.depth < b.depth || (a.depth == b.depth && a.index < b.index);
}

void render_view(const PointCloud& pc, const Camera& cam, const RenderSettings& rs, Image& texture, Image& depth,
                 Image& occupancy) {
  const int res = rs.resolution;
  const int k_max = rs.points_per_pixel;
  const double pitch = 2.0 / res;
  const double radius = std::max(rs.splat_radius, 0.75 * pitch);
  const double r2 = radius * radius;

  std::vector<Splat> slots(static_cast<std::size_t>(res) * res * k_max);
  std::vector<int> counts(static_cast<std::size_t>(res) * res, 0);

  for (std::size_t i = 0; i < pc.size(); ++i) {
    const auto& p = pc.positions[i];
    const double u = dot3(p, cam.right);
    const double v = dot3(p, cam.up);
    const double d = dot3(p, cam.forward) + kCameraDistance;
    // Pixel column j has center u_j = -1 + (2j+1)/res; row i has v_i = 1 - (2i+1)/res.
    const int j0 = std::max(0, static_cast<int>(std::ceil((u - radius + 1.0) / pitch - 0.5)));
    const int j1 = std::min(res - 1, static_cast<int>(std::floor((u + radius + 1.0) / pitch - 0.5)));
    const int i0 = std::max(0, static_cast<int>(std::ceil((1.0 - v - radius) / pitch - 0.5)));
    const int i1 = std::min(res - 1, static_cast<int>(std::floor((1.0 - v + radius) / pitch - 0.5)));
    for (int row = i0; row <= i1; ++row) {
      const double dv = v - (1.0 - (2.0 * row + 1.0) / res);
      for (int col = j0; col <= j1; ++col) {
        const double du = u - (-1.0 + (2.0 * col + 1.0) / res);
        const double dist2 = du * du + dv * dv;
        if (dist2 >= r2) continue;
        const Splat s{d, static_cast<std::uint32_t>(i), 1.0 - dist2 / r2};
        const std::size_t pix = static_cast<std::size_t>(row) * res + col;
        Splat* bucket = slots.data() + pix * k_max;
        int& n = counts[pix];
        if (n == k_max && !nearer(s, bucket[n - 1])) continue;
        int pos = n < k_max ? n++ : k_max - 1;
        while (pos > 0 && nearer(s, bucket[pos - 1])) {
          bucket[pos] = bucket[pos - 1];
          --pos;
        }
        bucket[pos] = s;
      }
    }
  }

  texture = Image(3, res, res);
  depth = Image(1, res, res);
  occupancy = Image(1, res, res);
  double dmin = std::numeric_limits<double>::infinity(), dmax = -dmin;
  for (std::size_t pix = 0; pix < counts.size(); ++pix) {
    const int n = counts[pix];
    if (n == 0) continue;
    const Splat* bucket = slots.data() + pix * k_max;
    double transmit = 1.0;
    double rgb[3] = {0.0, 0.0, 0.0};
    for (int k = 0; k < n; ++k) {
      const double w = bucket[k].alpha * transmit;
      const auto& c = pc.colors[bucket[k].index];
      for (int ch = 0; ch < 3; ++ch) rgb[ch] += w * c[ch];
      transmit *= 1.0 - bucket[k].alpha;
    }
    for (int ch = 0; ch < 3; ++ch) texture.data[ch * texture.plane() + pix] = std::clamp(rgb[ch], 0.0, 1.0);
    occupancy.data[pix] = 1.0;
    depth.data[pix] = bucket[0].depth;
    dmin = std::min(dmin, bucket[0].depth);
    dmax = std::max(dmax, bucket[0].depth);
  }
  const double span = dmax - dmin;
  for (std::size_t pix = 0; pix < counts.size(); ++pix) {
    if (counts[pix] == 0) continue;
    const double t = span > 0.0 ? (depth.data[pix] - dmin) / span : 0.0;
    depth.data[pix] = 1.0 - t * (1.0 - kFarDepth);
  }
}

}  // namespace

const char* view_name(int view) {
  static const char* kNames[kNumViews] = {"px", "py", "pz", "nx", "ny", "nz"};
  if (view < 0 || view >= kNumViews) throw std::out_of_range("view index");
  return kNames[view];
}

std::uint64_t RenderSettings::hash() const {
  std::ostringstream ss;
  ss.precision(17);
  ss << "res=" << resolution << ";radius=" << splat_radius << ";k=" << points_per_pixel << ";v1";
  return std::hash<std::string>{}(ss.str());
}

ViewSet project_views(const PointCloud& cloud, const RenderSettings& settings) {
  if (cloud.positions.empty()) throw std::invalid_argument("cannot render an empty point cloud");
  validate(cloud);
  if (settings.resolution < 64)
    throw std::invalid_argument("render resolution must be at least 64, got " + std::to_string(settings.resolution));
  if (settings.points_per_pixel < 1) throw std::invalid_argument("points_per_pixel must be positive");
  if (!(settings.splat_radius > 0.0)) throw std::invalid_argument("splat radius must be positive");
  ViewSet vs;
  for (int v = 0; v < kNumViews; ++v) {
    render_view(cloud, kCameras[v], settings, vs.texture[v], vs.depth[v], vs.occupancy[v]);
    vs.ratios[v] = occupancy_ratio(vs.occupancy[v]);
  }
  return vs;
}

double occupancy_ratio(const Image& occupancy) {
  if (occupancy.data.empty()) return 0.0;
  std::size_t ones = 0;
  for (double v : occupancy.data)
    if (v != 0.0) ++ones;
  return static_cast<double>(ones) / static_cast<double>(occupancy.data.size());
}

void check_view_set(const ViewSet& vs) {
  const int h = vs.texture[0].height, w = vs.texture[0].width;
  for (int v = 0; v < kNumViews; ++v) {
    const auto& t = vs.texture[v];
    const auto& d = vs.depth[v];
    const auto& o = vs.occupancy[v];
    if (t.channels != 3 || d.channels != 1 || o.channels != 1)
      throw std::invalid_argument(std::string("view ") + view_name(v) + " has wrong channel counts");
    if (t.height != h || t.width != w || !t.same_size(d) || !t.same_size(o))
      throw std::invalid_argument(std::string("view ") + view_name(v) + " resolution differs from view px");
  }
}

StitchedInput stitch(const ViewSet& vs) {
  check_view_set(vs);
  const int h = vs.height(), w = vs.width();
  StitchedInput out{Image(4, 2 * h, 3 * w), Image(1, 2 * h, 3 * w)};
  for (int v = 0; v < kNumViews; ++v) {
    const int oy = (v / 3) * h, ox = (v % 3) * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) out.image.at(c, oy + y, ox + x) = vs.texture[v].at(c, y, x);
        out.image.at(3, oy + y, ox + x) = vs.depth[v].at(0, y, x);
        out.occupancy.at(0, oy + y, ox + x) = vs.occupancy[v].at(0, y, x);
      }
  }
  return out;
}

ViewSet unstitch(const StitchedInput& st) {
  if (st.image.channels != 4 || st.image.height % 2 || st.image.width % 3 || !st.image.same_size(st.occupancy))
    throw std::invalid_argument("stitched input does not have a 2x3 layout");
  const int h = st.image.height / 2, w = st.image.width / 3;
  ViewSet vs;
  for (int v = 0; v < kNumViews; ++v) {
    const int oy = (v / 3) * h, ox = (v % 3) * w;
    vs.texture[v] = Image(3, h, w);
    vs.depth[v] = Image(1, h, w);
    vs.occupancy[v] = Image(1, h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) vs.texture[v].at(c, y, x) = st.image.at(c, oy + y, ox + x);
        vs.depth[v].at(0, y, x) = st.image.at(3, oy + y, ox + x);
        vs.occupancy[v].at(0, y, x) = st.occupancy.at(0, oy + y, ox + x);
      }
    vs.ratios[v] = occupancy_ratio(vs.occupancy[v]);
  }
  return vs;
}

}  // namespace pcqa
