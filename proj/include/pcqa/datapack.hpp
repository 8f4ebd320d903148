#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcqa/projector.hpp"

namespace pcqa {

struct ManifestEntry {
  std::string id;
  std::filesystem::path path;  // PLY file or pre-rendered .vset
  std::string content;         // reference content the sample was derived from
  double mos = 0.0;
};

/// Rows of a CSV with header `id,path,content,mos`.
struct Manifest {
  std::vector<ManifestEntry> entries;

  /// Distinct content ids in first-appearance order.
  std::vector<std::string> contents() const;
};

/// Relative paths are resolved against the manifest's directory.
Manifest read_manifest(const std::filesystem::path& csv);
void write_manifest(const Manifest& m, const std::filesystem::path& csv);
/// Unique ids, finite MOS, non-empty content ids.
void validate(const Manifest& m);

/// Content-disjoint k-fold partition.
struct FoldPlan {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::string>> folds;  // test contents of each fold

  std::vector<std::string> train_contents(int fold) const;
  const std::vector<std::string>& test_contents(int fold) const;
  std::vector<std::size_t> train_indices(const Manifest& m, int fold) const;
  std::vector<std::size_t> test_indices(const Manifest& m, int fold) const;
};

FoldPlan kfold_split(const Manifest& m, int k, std::uint64_t seed);
nlohmann::json to_json(const FoldPlan& plan);
FoldPlan fold_plan_from_json(const nlohmann::json& j);

/// Square crop at one uniformly drawn offset, shared by every image of every
/// view; ratios are recomputed on the cropped occupancy.
ViewSet crop_sample(const ViewSet& views, int size, std::mt19937_64& rng);
/// Crop at a given offset (used by crop_sample and tests).
ViewSet crop_at(const ViewSet& views, int size, int y0, int x0);

struct LabeledViews {
  std::string id;
  std::string content;
  double mos = 0.0;
  ViewSet views;
};

struct Batch {
  std::vector<ViewSet> views;
  std::vector<double> mos;

  std::size_t size() const { return mos.size(); }
  int resolution() const { return views.front().height(); }
};

Batch make_batch(std::vector<ViewSet> views, std::vector<double> mos);

/// Binary ViewSet file (.vset).
void save_view_set(const ViewSet& vs, const std::filesystem::path& path);
ViewSet load_view_set(const std::filesystem::path& path);

/// Loads a .vset entry directly or renders its PLY, consulting the cache
/// directory when one is given (empty path disables caching).
ViewSet load_or_render(const ManifestEntry& entry, const RenderSettings& settings,
                       const std::filesystem::path& cache_dir);

/// Cache directory from PCQA_CACHE_DIR, or empty.
std::filesystem::path cache_dir_from_env();

std::vector<LabeledViews> load_samples(const Manifest& m, const std::vector<std::size_t>& indices,
                                       const RenderSettings& settings, const std::filesystem::path& cache_dir);

}  // namespace pcqa
