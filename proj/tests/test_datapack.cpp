#include <cstdlib>
#include <fstream>
#include <set>

#include "doctest.h"
#include "pcqa/datapack.hpp"
#include "test_util.hpp"

using namespace pcqa;
using pcqa::testing::TempDir;

namespace {

Manifest grid_manifest(int contents, int per_content) {
  Manifest m;
  for (int c = 0; c < contents; ++c)
    for (int d = 0; d < per_content; ++d)
      m.entries.push_back({"s" + std::to_string(c) + "_" + std::to_string(d), "x.ply", "c" + std::to_string(c),
                           1.0 + d});
  return m;
}

ViewSet ramp_views(int res) {
  ViewSet vs;
  for (int v = 0; v < kNumViews; ++v) {
    vs.texture[v] = Image(3, res, res);
    vs.depth[v] = Image(1, res, res);
    vs.occupancy[v] = Image(1, res, res);
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) {
        for (int c = 0; c < 3; ++c) vs.texture[v].at(c, y, x) = (y * res + x + c + v) / double(4 * res * res);
        vs.depth[v].at(0, y, x) = (x + 1.0) / (res + 1.0);
        vs.occupancy[v].at(0, y, x) = (x + y + v) % 3 == 0 ? 1.0 : 0.0;
      }
    vs.ratios[v] = occupancy_ratio(vs.occupancy[v]);
  }
  return vs;
}

}  // namespace

TEST_CASE("manifest round trip and header check") {
  TempDir dir("manifest");
  Manifest m = grid_manifest(2, 2);
  for (auto& e : m.entries) e.path = dir / (e.id + ".ply");
  write_manifest(m, dir / "m.csv");
  std::ifstream in(dir / "m.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "id,path,content,mos");
  const auto back = read_manifest(dir / "m.csv");
  REQUIRE(back.entries.size() == 4);
  CHECK(back.entries[3].path == dir / "s1_1.ply");
  CHECK(back.entries[3].mos == 2.0);
  CHECK(back.contents() == std::vector<std::string>{"c0", "c1"});

  std::ofstream(dir / "bad.csv") << "name,file,mos\n";
  CHECK_THROWS_AS(read_manifest(dir / "bad.csv"), ParseError);
  std::ofstream(dir / "nan.csv") << "id,path,content,mos\na,a.ply,c,abc\n";
  CHECK_THROWS_AS(read_manifest(dir / "nan.csv"), ParseError);
}

TEST_CASE("manifest validation") {
  Manifest m = grid_manifest(1, 2);
  CHECK_NOTHROW(validate(m));
  m.entries[1].id = m.entries[0].id;
  CHECK_THROWS_AS(validate(m), std::invalid_argument);
  m = grid_manifest(1, 1);
  m.entries[0].mos = std::nan("");
  CHECK_THROWS_AS(validate(m), std::invalid_argument);
}

TEST_CASE("k-fold ratios follow the content count") {
  struct Case {
    int contents, k, train, test;
  };
  for (const auto& c : {Case{9, 9, 8, 1}, Case{20, 5, 16, 4}, Case{85, 5, 68, 17}}) {
    const auto m = grid_manifest(c.contents, 3);
    const auto plan = kfold_split(m, c.k, 1);
    for (int f = 0; f < c.k; ++f) {
      CHECK(static_cast<int>(plan.train_contents(f).size()) == c.train);
      CHECK(static_cast<int>(plan.test_contents(f).size()) == c.test);
    }
  }
}

TEST_CASE("k-fold splits are disjoint, complete and seeded") {
  const auto m = grid_manifest(13, 4);
  const auto a = kfold_split(m, 4, 99);
  const auto b = kfold_split(m, 4, 99);
  CHECK(a.folds == b.folds);
  CHECK(kfold_split(m, 4, 100).folds != a.folds);
  std::set<std::string> all;
  for (const auto& f : a.folds) {
    CHECK((f.size() == 3 || f.size() == 4));
    for (const auto& c : f) CHECK(all.insert(c).second);
  }
  CHECK(all.size() == 13);
  for (int f = 0; f < 4; ++f) {
    std::set<std::string> train;
    for (auto i : a.train_indices(m, f)) train.insert(m.entries[i].content);
    for (auto i : a.test_indices(m, f)) CHECK(train.count(m.entries[i].content) == 0);
    CHECK(a.train_indices(m, f).size() + a.test_indices(m, f).size() == m.entries.size());
  }
  const auto j = fold_plan_from_json(to_json(a));
  CHECK(j.folds == a.folds);
  CHECK(j.seed == 99);
  CHECK_THROWS_AS(kfold_split(m, 14, 1), std::invalid_argument);
}

TEST_CASE("crops are co-located across views and images") {
  const auto vs = ramp_views(16);
  std::mt19937_64 rng(3);
  CHECK(crop_sample(vs, 16, rng) == vs);
  const auto c = crop_at(vs, 8, 3, 5);
  for (int v = 0; v < kNumViews; ++v) {
    CHECK(c.texture[v].height == 8);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        CHECK(c.texture[v].at(1, y, x) == vs.texture[v].at(1, y + 3, x + 5));
        CHECK(c.depth[v].at(0, y, x) == vs.depth[v].at(0, y + 3, x + 5));
        CHECK(c.occupancy[v].at(0, y, x) == vs.occupancy[v].at(0, y + 3, x + 5));
      }
    CHECK(c.ratios[v] == occupancy_ratio(c.occupancy[v]));
  }
  std::mt19937_64 r1(42), r2(42);
  CHECK(crop_sample(vs, 7, r1) == crop_sample(vs, 7, r2));
  CHECK_THROWS_AS(crop_sample(vs, 17, rng), std::invalid_argument);
}

TEST_CASE("crop of an empty region has zero ratios") {
  auto vs = ramp_views(16);
  for (auto& o : vs.occupancy) std::fill(o.data.begin(), o.data.end(), 0.0);
  std::mt19937_64 rng(1);
  const auto c = crop_sample(vs, 8, rng);
  for (double r : c.ratios) CHECK(r == 0.0);
}

TEST_CASE("batch assembly") {
  const auto b = make_batch({ramp_views(8), ramp_views(8)}, {1.0, 2.0});
  CHECK(b.size() == 2);
  CHECK(b.resolution() == 8);
  CHECK(make_batch({ramp_views(8)}, {3.0}).size() == 1);
  CHECK_THROWS_AS(make_batch({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(make_batch({ramp_views(8), ramp_views(16)}, {1, 2}), std::invalid_argument);
}

TEST_CASE("view set files and the render cache") {
  TempDir dir("cache");
  const auto vs = ramp_views(8);
  save_view_set(vs, dir / "a.vset");
  CHECK(load_view_set(dir / "a.vset") == vs);
  std::ofstream(dir / "junk.vset") << "nope";
  CHECK_THROWS_AS(load_view_set(dir / "junk.vset"), ParseError);

  write_ply(testing::random_cloud(300, 8), dir / "p.ply");
  ::setenv("PCQA_CACHE_DIR", (dir / "cache").c_str(), 1);
  const auto cache = cache_dir_from_env();
  ::unsetenv("PCQA_CACHE_DIR");
  CHECK(cache == dir / "cache");
  CHECK(cache_dir_from_env().empty());

  RenderSettings rs;
  rs.resolution = 64;
  rs.splat_radius = 0.03;
  const ManifestEntry entry{"p", dir / "p.ply", "c", 3.0};
  const auto first = load_or_render(entry, rs, cache);
  REQUIRE(std::filesystem::exists(cache));
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& f : std::filesystem::directory_iterator(cache)) ++files;
  CHECK(files == 1);
  CHECK(load_or_render(entry, rs, cache) == first);
  CHECK(load_or_render(entry, rs, {}) == first);
  rs.splat_radius = 0.04;
  load_or_render(entry, rs, cache);
  files = 0;
  for ([[maybe_unused]] const auto& f : std::filesystem::directory_iterator(cache)) ++files;
  CHECK(files == 2);
}
