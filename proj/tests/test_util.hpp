#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "pcqa/cloudio.hpp"

namespace pcqa::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("pcqa_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0), c(0.0, 1.0);
  PointCloud pc;
  pc.name = "random";
  for (std::size_t i = 0; i < n; ++i) {
    pc.positions.push_back({u(rng), 0.5 * u(rng), 0.25 * u(rng)});
    pc.colors.push_back({c(rng), c(rng), c(rng)});
  }
  return pc;
}

}  // namespace pcqa::testing
