#include "pcqa/datapack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace pcqa {

namespace {

constexpr char kManifestHeader[] = "id,path,content,mos";
constexpr char kViewSetMagic[8] = {'P', 'C', 'Q', 'A', 'V', 'S', 'E', 'T'};
constexpr std::uint32_t kViewSetVersion = 1;

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::vector<std::string> Manifest::contents() const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& e : entries)
    if (seen.insert(e.content).second) out.push_back(e.content);
  return out;
}

void validate(const Manifest& m) {
  std::unordered_set<std::string> ids;
  for (const auto& e : m.entries) {
    if (e.id.empty()) throw std::invalid_argument("manifest entry with empty id");
    if (!ids.insert(e.id).second) throw std::invalid_argument("duplicate sample id '" + e.id + "'");
    if (e.content.empty()) throw std::invalid_argument("sample '" + e.id + "' has no content id");
    if (!std::isfinite(e.mos)) throw std::invalid_argument("sample '" + e.id + "' has non-finite MOS");
  }
}

Manifest read_manifest(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw std::runtime_error("cannot open manifest " + csv.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(csv.string() + ": empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    throw ParseError(csv.string() + ": line 1 '" + line + "': expected header '" + kManifestHeader + "'");
  Manifest m;
  const auto base = csv.parent_path();
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 4)
      throw ParseError(csv.string() + ": line " + std::to_string(line_no) + " '" + line + "': expected 4 fields");
    ManifestEntry e;
    e.id = cells[0];
    e.path = cells[1];
    if (e.path.is_relative()) e.path = base / e.path;
    e.content = cells[2];
    try {
      std::size_t used = 0;
      e.mos = std::stod(cells[3], &used);
      if (used != cells[3].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ParseError(csv.string() + ": line " + std::to_string(line_no) + " '" + line + "': bad MOS value");
    }
    m.entries.push_back(std::move(e));
  }
  validate(m);
  return m;
}

void write_manifest(const Manifest& m, const std::filesystem::path& csv) {
  validate(m);
  std::ofstream out(csv);
  if (!out) throw std::runtime_error("cannot write manifest " + csv.string());
  out.precision(17);
  out << kManifestHeader << '\n';
  const auto base = csv.parent_path();
  for (const auto& e : m.entries) {
    auto rel = e.path.lexically_relative(base);
    if (rel.empty() || *rel.begin() == "..") rel = e.path;
    out << e.id << ',' << rel.generic_string() << ',' << e.content << ',' << e.mos << '\n';
  }
}

std::vector<std::string> FoldPlan::train_contents(int fold) const {
  std::vector<std::string> out;
  for (int f = 0; f < k; ++f)
    if (f != fold) out.insert(out.end(), folds[f].begin(), folds[f].end());
  return out;
}

const std::vector<std::string>& FoldPlan::test_contents(int fold) const {
  if (fold < 0 || fold >= k) throw std::out_of_range("fold " + std::to_string(fold) + " of " + std::to_string(k));
  return folds[static_cast<std::size_t>(fold)];
}

std::vector<std::size_t> FoldPlan::test_indices(const Manifest& m, int fold) const {
  const auto& test = test_contents(fold);
  const std::set<std::string> in_test(test.begin(), test.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.entries.size(); ++i)
    if (in_test.count(m.entries[i].content)) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldPlan::train_indices(const Manifest& m, int fold) const {
  const auto& test = test_contents(fold);
  const std::set<std::string> in_test(test.begin(), test.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.entries.size(); ++i)
    if (!in_test.count(m.entries[i].content)) out.push_back(i);
  return out;
}

FoldPlan kfold_split(const Manifest& m, int k, std::uint64_t seed) {
  auto contents = m.contents();
  if (k < 2) throw std::invalid_argument("k-fold split needs k >= 2");
  if (static_cast<std::size_t>(k) > contents.size())
    throw std::invalid_argument("k = " + std::to_string(k) + " exceeds the " + std::to_string(contents.size()) +
                                " distinct contents");
  std::sort(contents.begin(), contents.end());
  std::mt19937_64 rng(seed);
  std::shuffle(contents.begin(), contents.end(), rng);
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.folds.resize(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < contents.size(); ++i) plan.folds[i % k].push_back(contents[i]);
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  return plan;
}

nlohmann::json to_json(const FoldPlan& plan) {
  return nlohmann::json{{"k", plan.k}, {"seed", plan.seed}, {"folds", plan.folds}};
}

FoldPlan fold_plan_from_json(const nlohmann::json& j) {
  FoldPlan p;
  p.k = j.at("k").get<int>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.folds = j.at("folds").get<std::vector<std::vector<std::string>>>();
  if (static_cast<int>(p.folds.size()) != p.k) throw std::invalid_argument("fold plan: folds.size() != k");
  return p;
}

ViewSet crop_at(const ViewSet& vs, int size, int y0, int x0) {
  check_view_set(vs);
  if (size < 1 || size > vs.height() || size > vs.width())
    throw std::invalid_argument("crop size " + std::to_string(size) + " exceeds image size " +
                                std::to_string(vs.height()));
  if (y0 < 0 || x0 < 0 || y0 + size > vs.height() || x0 + size > vs.width())
    throw std::invalid_argument("crop window outside the image");
  auto cut = [&](const Image& im) {
    Image out(im.channels, size, size);
    for (int c = 0; c < im.channels; ++c)
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) out.at(c, y, x) = im.at(c, y0 + y, x0 + x);
    return out;
  };
  ViewSet out;
  for (int v = 0; v < kNumViews; ++v) {
    out.texture[v] = cut(vs.texture[v]);
    out.depth[v] = cut(vs.depth[v]);
    out.occupancy[v] = cut(vs.occupancy[v]);
    out.ratios[v] = occupancy_ratio(out.occupancy[v]);
  }
  return out;
}

ViewSet crop_sample(const ViewSet& vs, int size, std::mt19937_64& rng) {
  if (size > vs.height() || size > vs.width())
    throw std::invalid_argument("crop size " + std::to_string(size) + " exceeds image size " +
                                std::to_string(vs.height()));
  std::uniform_int_distribution<int> dy(0, vs.height() - size), dx(0, vs.width() - size);
  const int y0 = dy(rng);
  const int x0 = dx(rng);
  return crop_at(vs, size, y0, x0);
}

Batch make_batch(std::vector<ViewSet> views, std::vector<double> mos) {
  if (views.empty()) throw std::invalid_argument("cannot build an empty batch");
  if (views.size() != mos.size()) throw std::invalid_argument("batch: views and MOS counts differ");
  for (const auto& v : views) {
    check_view_set(v);
    if (v.height() != views.front().height() || v.width() != views.front().width())
      throw std::invalid_argument("batch: mixed resolutions " + std::to_string(v.height()) + " and " +
                                  std::to_string(views.front().height()));
  }
  return Batch{std::move(views), std::move(mos)};
}

void save_view_set(const ViewSet& vs, const std::filesystem::path& path) {
  check_view_set(vs);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(kViewSetMagic, sizeof kViewSetMagic);
    const std::uint32_t header[3] = {kViewSetVersion, static_cast<std::uint32_t>(vs.height()),
                                     static_cast<std::uint32_t>(vs.width())};
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    for (int v = 0; v < kNumViews; ++v)
      for (const Image* im : {&vs.texture[v], &vs.depth[v], &vs.occupancy[v]})
        out.write(reinterpret_cast<const char*>(im->data.data()),
                  static_cast<std::streamsize>(im->data.size() * sizeof(double)));
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

ViewSet load_view_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  std::uint32_t header[3];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kViewSetMagic, sizeof magic) != 0)
    throw ParseError(path.string() + ": not a view-set file");
  if (!in.read(reinterpret_cast<char*>(header), sizeof header) || header[0] != kViewSetVersion)
    throw ParseError(path.string() + ": unsupported view-set version");
  const int h = static_cast<int>(header[1]), w = static_cast<int>(header[2]);
  ViewSet vs;
  for (int v = 0; v < kNumViews; ++v) {
    vs.texture[v] = Image(3, h, w);
    vs.depth[v] = Image(1, h, w);
    vs.occupancy[v] = Image(1, h, w);
    for (Image* im : {&vs.texture[v], &vs.depth[v], &vs.occupancy[v]})
      if (!in.read(reinterpret_cast<char*>(im->data.data()),
                   static_cast<std::streamsize>(im->data.size() * sizeof(double))))
        throw ParseError(path.string() + ": truncated view-set data");
    vs.ratios[v] = occupancy_ratio(vs.occupancy[v]);
  }
  return vs;
}

std::filesystem::path cache_dir_from_env() {
  const char* dir = std::getenv("PCQA_CACHE_DIR");
  return dir ? std::filesystem::path(dir) : std::filesystem::path();
}

ViewSet load_or_render(const ManifestEntry& entry, const RenderSettings& settings,
                       const std::filesystem::path& cache_dir) {
  if (entry.path.extension() == ".vset") return load_view_set(entry.path);
  std::filesystem::path cached;
  if (!cache_dir.empty()) {
    const auto key = settings.hash() ^ (std::hash<std::string>{}(std::filesystem::absolute(entry.path).string()) * 31);
    std::ostringstream name;
    name << entry.id << '_' << std::hex << key << ".vset";
    cached = cache_dir / name.str();
    if (std::filesystem::exists(cached)) return load_view_set(cached);
  }
  ViewSet vs = project_views(canonicalize(load_ply(entry.path)), settings);
  if (!cached.empty()) {
    std::filesystem::create_directories(cache_dir);
    save_view_set(vs, cached);
  }
  return vs;
}

std::vector<LabeledViews> load_samples(const Manifest& m, const std::vector<std::size_t>& indices,
                                       const RenderSettings& settings, const std::filesystem::path& cache_dir) {
  std::vector<LabeledViews> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    const auto& e = m.entries.at(i);
    out.push_back({e.id, e.content, e.mos, load_or_render(e, settings, cache_dir)});
  }
  return out;
}

}  // namespace pcqa
