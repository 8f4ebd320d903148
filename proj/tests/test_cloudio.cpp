#include <fstream>

#include "doctest.h"
#include "pcqa/cloudio.hpp"
#include "test_util.hpp"

using namespace pcqa;
using pcqa::testing::TempDir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

const char* kThreePoints =
    "ply\nformat ascii 1.0\nelement vertex 3\n"
    "property float x\nproperty float y\nproperty float z\n"
    "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    "0 0 0 255 0 0\n1 0 0 0 255 0\n0 1 0 0 0 255\n";

}  // namespace

TEST_CASE("ascii ply colors are rescaled") {
  TempDir dir("ply");
  write_text(dir / "a.ply", kThreePoints);
  const auto pc = load_ply(dir / "a.ply");
  REQUIRE(pc.size() == 3);
  CHECK(pc.colors[0] == Vec3{1, 0, 0});
  CHECK(pc.colors[1] == Vec3{0, 1, 0});
  CHECK(pc.colors[2] == Vec3{0, 0, 1});
  CHECK(pc.positions[1] == Vec3{1, 0, 0});
}

TEST_CASE("binary and ascii encodings load identically") {
  TempDir dir("ply");
  write_text(dir / "a.ply", kThreePoints);
  const auto pc = load_ply(dir / "a.ply");
  write_ply(pc, dir / "b.ply", PlyFormat::kBinaryLittleEndian);
  const auto pb = load_ply(dir / "b.ply");
  CHECK(pb.positions == pc.positions);
  CHECK(pb.colors == pc.colors);
}

TEST_CASE("write then load round-trips") {
  TempDir dir("ply");
  auto pc = testing::random_cloud(200, 3);
  for (auto& c : pc.colors)
    for (auto& v : c) v = std::round(v * 255.0) / 255.0;
  for (auto fmt : {PlyFormat::kAscii, PlyFormat::kBinaryLittleEndian}) {
    write_ply(pc, dir / "r.ply", fmt);
    const auto back = load_ply(dir / "r.ply");
    REQUIRE(back.size() == pc.size());
    for (std::size_t i = 0; i < pc.size(); ++i)
      for (int a = 0; a < 3; ++a) {
        CHECK(back.positions[i][a] == doctest::Approx(pc.positions[i][a]).epsilon(1e-6));
        CHECK(back.colors[i][a] == doctest::Approx(pc.colors[i][a]).epsilon(1e-6));
      }
  }
}

TEST_CASE("float rgb properties are accepted") {
  TempDir dir("ply");
  write_text(dir / "f.ply",
             "ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\n"
             "property float r\nproperty float g\nproperty float b\nend_header\n1 2 3 0.25 0.5 1\n");
  const auto pc = load_ply(dir / "f.ply");
  CHECK(pc.colors[0] == Vec3{0.25, 0.5, 1.0});
}

TEST_CASE("short vertex list is a parse error") {
  TempDir dir("ply");
  std::string s =
      "ply\nformat ascii 1.0\nelement vertex 10\nproperty float x\nproperty float y\nproperty float z\n"
      "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (int i = 0; i < 9; ++i) s += "0 0 0 1 2 3\n";
  write_text(dir / "s.ply", s);
  CHECK_THROWS_AS(load_ply(dir / "s.ply"), ParseError);

  // Same for a truncated binary body.
  write_ply(testing::random_cloud(10, 1), dir / "b.ply");
  std::filesystem::resize_file(dir / "b.ply", std::filesystem::file_size(dir / "b.ply") - 27);
  CHECK_THROWS_AS(load_ply(dir / "b.ply"), ParseError);
}

TEST_CASE("header errors name the line") {
  TempDir dir("ply");
  write_text(dir / "h.ply", "ply\nformat ascii 1.0\nelement vertex many\nend_header\n");
  try {
    load_ply(dir / "h.ply");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  write_text(dir / "m.ply", "plx\n");
  CHECK_THROWS_AS(load_ply(dir / "m.ply"), ParseError);
  write_text(dir / "big.ply", "ply\nformat binary_big_endian 1.0\nend_header\n");
  CHECK_THROWS_AS(load_ply(dir / "big.ply"), ParseError);
  CHECK_THROWS(load_ply(dir / "missing.ply"));
}

TEST_CASE("colorless clouds are rejected") {
  TempDir dir("ply");
  write_text(dir / "c.ply",
             "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\n"
             "end_header\n0 0 0\n");
  try {
    load_ply(dir / "c.ply");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("color") != std::string::npos);
  }
}

TEST_CASE("canonicalize shifts and scales uniformly") {
  PointCloud cube;
  for (int i = 0; i < 8; ++i) {
    cube.positions.push_back({10.0 + (i & 1), 10.0 + ((i >> 1) & 1), 10.0 + ((i >> 2) & 1)});
    cube.colors.push_back({0.5, 0.5, 0.5});
  }
  const auto c = canonicalize(cube);
  for (const auto& p : c.positions)
    for (double v : p) CHECK(std::abs(v) == doctest::Approx(1.0));
  CHECK(c.colors == cube.colors);

  PointCloud box;
  box.positions = {{0, 0, 0}, {4, 2, 2}};
  box.colors = {{0, 0, 0}, {1, 1, 1}};
  const auto e = extents(canonicalize(box));
  CHECK(e[0] == doctest::Approx(2.0));
  CHECK(e[1] == doctest::Approx(1.0));
  CHECK(e[2] == doctest::Approx(1.0));
}

TEST_CASE("canonicalize is idempotent and similarity invariant") {
  const auto pc = testing::random_cloud(300, 5);
  const auto a = canonicalize(pc);
  const auto b = canonicalize(a);
  auto moved = pc;
  for (auto& p : moved.positions)
    for (int k = 0; k < 3; ++k) p[k] = 3.7 * p[k] + (k - 1) * 12.5;
  const auto c = canonicalize(moved);
  for (std::size_t i = 0; i < pc.size(); ++i)
    for (int k = 0; k < 3; ++k) {
      CHECK(b.positions[i][k] == doctest::Approx(a.positions[i][k]).epsilon(1e-6));
      CHECK(c.positions[i][k] == doctest::Approx(a.positions[i][k]).epsilon(1e-6));
    }
}

TEST_CASE("invalid clouds") {
  PointCloud same;
  same.positions = {{1, 1, 1}, {1, 1, 1}};
  same.colors = {{0, 0, 0}, {0, 0, 0}};
  CHECK_THROWS_AS(canonicalize(same), std::invalid_argument);
  CHECK_THROWS_AS(canonicalize(PointCloud{}), std::invalid_argument);
  PointCloud bad = same;
  bad.positions[0][0] = std::nan("");
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
  bad = same;
  bad.colors[1][2] = 1.5;
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
}
