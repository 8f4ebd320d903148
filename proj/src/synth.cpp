#include "pcqa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace pcqa {

namespace {

Vec3 pattern_color(int pattern, const Vec3& p, int content_hue) {
  const double h = 0.15 * content_hue;
  switch (pattern % 4) {
    case 0:  // gradient along z
      return {0.5 + 0.5 * p[2], 0.3 + h, 0.8 - 0.4 * (p[2] + 1.0) / 2.0};
    case 1: {  // stripes along x
      const bool on = static_cast<int>(std::floor((p[0] + 1.0) * 4.0)) % 2 == 0;
      return on ? Vec3{0.9, 0.2 + h, 0.1} : Vec3{0.1, 0.3, 0.9 - h};
    }
    case 2: {  // 3D checkerboard
      const int s = static_cast<int>(std::floor((p[0] + 1) * 3)) + static_cast<int>(std::floor((p[1] + 1) * 3)) +
                    static_cast<int>(std::floor((p[2] + 1) * 3));
      return s % 2 ? Vec3{0.95, 0.95, 0.2 + h} : Vec3{0.15, 0.5, 0.2};
    }
    default:  // two-tone by hemisphere
      return p[1] > 0 ? Vec3{0.8, 0.4 + h, 0.6} : Vec3{0.2, 0.7, 0.5 - h / 2};
  }
}

}  // namespace

PointCloud make_primitive(Primitive shape, int pattern, int points, std::mt19937_64& rng) {
  if (points < 1) throw std::invalid_argument("primitive needs at least one point");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  PointCloud pc;
  pc.positions.reserve(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) {
    Vec3 p{};
    switch (shape) {
      case Primitive::kSphere: {
        Vec3 d{n(rng), n(rng), n(rng)};
        const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        p = {0.9 * d[0] / len, 0.9 * d[1] / len, 0.9 * d[2] / len};
        break;
      }
      case Primitive::kCube: {
        const int face = static_cast<int>(u(rng) * 6.0) % 6;
        const double a = 2 * u(rng) - 1, b = 2 * u(rng) - 1, s = face < 3 ? 0.8 : -0.8;
        const int axis = face % 3;
        p[axis] = s;
        p[(axis + 1) % 3] = 0.8 * a;
        p[(axis + 2) % 3] = 0.8 * b;
        break;
      }
      case Primitive::kTorus: {
        const double t = kTwoPi * u(rng), s = kTwoPi * u(rng);
        const double big = 0.65, small = 0.3;
        p = {(big + small * std::cos(s)) * std::cos(t), (big + small * std::cos(s)) * std::sin(t), small * std::sin(s)};
        break;
      }
      case Primitive::kCylinder: {
        const double t = kTwoPi * u(rng);
        const double pick = u(rng);
        if (pick < 0.7) {
          p = {0.6 * std::cos(t), 0.6 * std::sin(t), 1.6 * u(rng) - 0.8};
        } else {
          const double r = 0.6 * std::sqrt(u(rng));
          p = {r * std::cos(t), r * std::sin(t), pick < 0.85 ? 0.8 : -0.8};
        }
        break;
      }
    }
    pc.positions.push_back(p);
    pc.colors.push_back(pattern_color(pattern, p, static_cast<int>(shape)));
  }
  return pc;
}

PointCloud distort(const PointCloud& pc, double severity, std::mt19937_64& rng) {
  if (severity < 0.0 || severity > 1.0) throw std::invalid_argument("severity must lie in [0, 1]");
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double color_sigma = 0.5 * severity, pos_sigma = 0.03 * severity, keep = 1.0 - 0.8 * severity;
  PointCloud out;
  out.name = pc.name;
  for (std::size_t i = 0; i < pc.size(); ++i) {
    Vec3 p = pc.positions[i], c = pc.colors[i];
    for (int a = 0; a < 3; ++a) {
      p[a] += pos_sigma * n(rng);
      c[a] = std::clamp(c[a] + color_sigma * n(rng), 0.0, 1.0);
    }
    if (u(rng) >= keep && out.size() + (pc.size() - i) > 16) continue;
    out.positions.push_back(p);
    out.colors.push_back(c);
  }
  return out;
}

double pseudo_mos(double severity) { return 5.0 - 4.0 * severity; }

Manifest generate_synthetic(const std::filesystem::path& dir, const SynthOptions& o) {
  if (o.contents < 1 || o.levels < 1 || o.contents * o.levels < 2)
    throw std::invalid_argument("synthetic set needs at least two samples");
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(o.seed);
  Manifest m;
  const int total = o.contents * o.levels;
  for (int c = 0; c < o.contents; ++c) {
    const auto shape = static_cast<Primitive>(c % 4);
    const PointCloud ref = make_primitive(shape, c / 4 + c, o.points, rng);
    const std::string content = "content" + std::to_string(c);
    for (int l = 0; l < o.levels; ++l) {
      const double severity = static_cast<double>(l * o.contents + c) / (total - 1);
      PointCloud pc = distort(ref, severity, rng);
      const std::string id = content + "_d" + std::to_string(l);
      pc.name = id;
      const auto file = id + ".ply";
      write_ply(pc, dir / file);
      m.entries.push_back({id, dir / file, content, pseudo_mos(severity)});
    }
  }
  write_manifest(m, dir / "manifest.csv");
  return m;
}

}  // namespace pcqa
