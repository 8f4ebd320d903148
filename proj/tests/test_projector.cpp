#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "pcqa/projector.hpp"
#include "test_util.hpp"

using namespace pcqa;

namespace {

PointCloud single_point(Vec3 p, Vec3 c) {
  PointCloud pc;
  pc.positions = {p};
  pc.colors = {c};
  return pc;
}

RenderSettings small(double radius = 0.05) {
  RenderSettings rs;
  rs.resolution = 64;
  rs.splat_radius = radius;
  return rs;
}

// Pixel whose center is nearest to image-plane coordinate (u, v).
std::pair<int, int> pixel_of(double u, double v, int res) {
  const double pitch = 2.0 / res;
  return {static_cast<int>(std::floor((1.0 - v) / pitch)), static_cast<int>(std::floor((u + 1.0) / pitch))};
}

}  // namespace

TEST_CASE("occupancy ratio counts ones") {
  CHECK(occupancy_ratio(Image(1, 4, 4, 1.0)) == 1.0);
  CHECK(occupancy_ratio(Image(1, 4, 4, 0.0)) == 0.0);
  Image half(1, 4, 4);
  for (int i = 0; i < 8; ++i) half.data[static_cast<std::size_t>(i)] = 1.0;
  CHECK(occupancy_ratio(half) == 0.5);
}

TEST_CASE("single red point shows a centered blob in every view") {
  const auto vs = project_views(single_point({0, 0, 0}, {1, 0, 0}), small());
  for (int v = 0; v < kNumViews; ++v) {
    CHECK(vs.ratios[v] > 0.0);
    // The point sits on the corner shared by the four central pixels.
    for (int y : {31, 32})
      for (int x : {31, 32}) {
        CHECK(vs.occupancy[v].at(0, y, x) == 1.0);
        CHECK(vs.texture[v].at(0, y, x) > 0.5);
        CHECK(vs.texture[v].at(1, y, x) == 0.0);
        CHECK(vs.depth[v].at(0, y, x) == 1.0);
      }
    CHECK(vs.occupancy[v].at(0, 0, 0) == 0.0);
  }
}

TEST_CASE("front-to-back compositing of two stacked points") {
  // Near red point at z=+1 covers the far blue point at z=-1 in the +z view.
  PointCloud pc;
  pc.positions = {{0, 0, -1}, {0, 0, 1}};
  pc.colors = {{0, 0, 1}, {1, 0, 0}};
  const double r = 0.05;
  const auto vs = project_views(pc, small(r));
  const int pz = static_cast<int>(View::kPosZ);
  // Pixel (31,31) center is at (-1/64, 1/64); distance^2 to the splat center is 2/64^2.
  const double alpha = 1.0 - (2.0 / (64.0 * 64.0)) / (r * r);
  CHECK(vs.texture[pz].at(0, 31, 31) == doctest::Approx(alpha));
  CHECK(vs.texture[pz].at(2, 31, 31) == doctest::Approx(alpha * (1.0 - alpha)));
  // The -z camera sees blue in front.
  const int nz = static_cast<int>(View::kNegZ);
  CHECK(vs.texture[nz].at(2, 31, 31) == doctest::Approx(alpha));
  CHECK(vs.texture[nz].at(0, 31, 31) == doctest::Approx(alpha * (1.0 - alpha)));
}

TEST_CASE("depth maps nearest to one and farthest to 1/255") {
  PointCloud pc;
  pc.positions = {{-0.5, 0, 1}, {0.5, 0, -1}};
  pc.colors = {{1, 1, 1}, {1, 1, 1}};
  const auto vs = project_views(pc, small(0.03));
  const int pz = static_cast<int>(View::kPosZ);
  const auto [yn, xn] = pixel_of(-0.5 + 0.01, 0.01, 64);  // +z view: right = +x, up = +y
  const auto [yf, xf] = pixel_of(0.5 + 0.01, 0.01, 64);
  CHECK(vs.depth[pz].at(0, yn, xn) == 1.0);
  CHECK(vs.depth[pz].at(0, yf, xf) == doctest::Approx(kFarDepth));
  for (int v = 0; v < kNumViews; ++v)
    for (std::size_t i = 0; i < vs.depth[v].data.size(); ++i) {
      const double d = vs.depth[v].data[i];
      CHECK((vs.occupancy[v].data[i] == 0.0) == (d == 0.0));
      CHECK(d <= 1.0);
    }
}

TEST_CASE("rendered images satisfy the view-set invariants") {
  RenderSettings rs = small(0.02);
  const auto vs = project_views(canonicalize(testing::random_cloud(2000, 11)), rs);
  check_view_set(vs);
  for (int v = 0; v < kNumViews; ++v) {
    CHECK(vs.ratios[v] == occupancy_ratio(vs.occupancy[v]));
    CHECK(vs.ratios[v] > 0.0);
    for (std::size_t p = 0; p < vs.occupancy[v].plane(); ++p) {
      const double o = vs.occupancy[v].data[p];
      CHECK((o == 0.0 || o == 1.0));
      for (int c = 0; c < 3; ++c) {
        const double t = vs.texture[v].data[c * vs.occupancy[v].plane() + p];
        CHECK((t >= 0.0 && t <= 1.0));
        if (o == 0.0) CHECK(t == 0.0);
      }
    }
  }
}

TEST_CASE("rotating about z permutes the side views") {
  const auto pc = canonicalize(testing::random_cloud(3000, 4));
  auto rot = pc;
  for (auto& p : rot.positions) p = {-p[1], p[0], p[2]};
  const auto a = project_views(pc, small(0.02));
  const auto b = project_views(canonicalize(rot), small(0.02));
  auto ra = std::vector<double>(a.ratios.begin(), a.ratios.end());
  auto rb = std::vector<double>(b.ratios.begin(), b.ratios.end());
  std::sort(ra.begin(), ra.end());
  std::sort(rb.begin(), rb.end());
  for (int i = 0; i < kNumViews; ++i) CHECK(rb[i] == doctest::Approx(ra[i]).epsilon(2e-3));
}

TEST_CASE("stitch layout and lossless unstitch") {
  const auto vs = project_views(canonicalize(testing::random_cloud(500, 2)), small(0.03));
  const auto st = stitch(vs);
  CHECK(st.image.channels == 4);
  CHECK(st.image.height == 128);
  CHECK(st.image.width == 192);
  CHECK(st.occupancy.height == 128);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      CHECK(st.image.at(0, y, x) == vs.texture[0].at(0, y, x));
      CHECK(st.image.at(3, y, x) == vs.depth[0].at(0, y, x));
      CHECK(st.image.at(3, 64 + y, 128 + x) == vs.depth[5].at(0, y, x));
    }
  CHECK(unstitch(st) == vs);
}

TEST_CASE("blank view set stitches to zeros") {
  ViewSet vs;
  for (int v = 0; v < kNumViews; ++v) {
    vs.texture[v] = Image(3, 8, 8);
    vs.depth[v] = Image(1, 8, 8);
    vs.occupancy[v] = Image(1, 8, 8);
  }
  const auto st = stitch(vs);
  CHECK(std::all_of(st.image.data.begin(), st.image.data.end(), [](double v) { return v == 0.0; }));
  CHECK(std::all_of(st.occupancy.data.begin(), st.occupancy.data.end(), [](double v) { return v == 0.0; }));
  vs.depth[3] = Image(1, 4, 4);
  CHECK_THROWS_AS(stitch(vs), std::invalid_argument);
}

TEST_CASE("render argument errors") {
  CHECK_THROWS_AS(project_views(PointCloud{}, small()), std::invalid_argument);
  RenderSettings rs = small();
  rs.resolution = 32;
  CHECK_THROWS_AS(project_views(single_point({0, 0, 0}, {1, 1, 1}), rs), std::invalid_argument);
}
