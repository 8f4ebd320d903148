#include "pcqa/imageio.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>

#include "json.hpp"

namespace pcqa {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

// Rows are pre-packed bytes; palette is used when non-empty.
void write_rows(const std::filesystem::path& path, int width, int height, int color_type, int bit_depth,
                const std::vector<std::vector<png_byte>>& rows, const std::vector<png_color>& palette = {}) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (!palette.empty()) png_set_PLTE(png, info, palette.data(), static_cast<int>(palette.size()));
  png_write_info(png, info);
  for (const auto& r : rows) png_write_row(png, r.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

png_byte to8(double v) { return static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

Image channels(const Image& im, int first, int count) {
  Image out(count, im.height, im.width);
  std::copy_n(im.data.begin() + static_cast<std::ptrdiff_t>(first * im.plane()), count * im.plane(), out.data.begin());
  return out;
}

}  // namespace

void write_png(const Image& im, const std::filesystem::path& path) {
  if (im.channels != 1 && im.channels != 3) throw std::invalid_argument("write_png: need 1 or 3 channels");
  std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(im.height));
  for (int y = 0; y < im.height; ++y) {
    auto& r = rows[static_cast<std::size_t>(y)];
    r.reserve(static_cast<std::size_t>(im.width * im.channels));
    for (int x = 0; x < im.width; ++x)
      for (int c = 0; c < im.channels; ++c) r.push_back(to8(im.at(c, y, x)));
  }
  write_rows(path, im.width, im.height, im.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, 8, rows);
}

void write_png16(const Image& im, const std::filesystem::path& path) {
  std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(im.height));
  for (int y = 0; y < im.height; ++y) {
    auto& r = rows[static_cast<std::size_t>(y)];
    for (int x = 0; x < im.width; ++x) {
      const auto v = static_cast<unsigned>(std::lround(std::clamp(im.at(0, y, x), 0.0, 1.0) * 65535.0));
      r.push_back(static_cast<png_byte>(v >> 8));  // PNG is big-endian
      r.push_back(static_cast<png_byte>(v & 0xff));
    }
  }
  write_rows(path, im.width, im.height, PNG_COLOR_TYPE_GRAY, 16, rows);
}

void write_label_png(const std::vector<int>& labels, int height, int width, const std::filesystem::path& path) {
  if (labels.size() != static_cast<std::size_t>(height) * width) throw std::invalid_argument("label map size");
  std::vector<png_color> palette;
  for (int i = 0; i < 256; ++i) {
    // Golden-ratio hue walk keeps neighbouring labels distinguishable.
    const double h = std::fmod(i * 0.618033988749895, 1.0) * 6.0;
    const double f = h - std::floor(h);
    const double rgb[6][3] = {{1, f, 0}, {1 - f, 1, 0}, {0, 1, f}, {0, 1 - f, 1}, {f, 0, 1}, {1, 0, 1 - f}};
    const auto& c = rgb[static_cast<int>(h) % 6];
    palette.push_back({to8(0.2 + 0.8 * c[0]), to8(0.2 + 0.8 * c[1]), to8(0.2 + 0.8 * c[2])});
  }
  std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const int v = labels[static_cast<std::size_t>(y) * width + x];
      if (v < 0 || v > 255) throw std::invalid_argument("label outside [0, 255]");
      rows[static_cast<std::size_t>(y)].push_back(static_cast<png_byte>(v));
    }
  write_rows(path, width, height, PNG_COLOR_TYPE_PALETTE, 8, rows, palette);
}

Image heatmap(const Tensor& maps, int channel) {
  const auto h = static_cast<int>(maps.dim(1)), w = static_cast<int>(maps.dim(2));
  Image out(1, h, w);
  auto v = maps.data().subspan(static_cast<std::size_t>(channel) * h * w, static_cast<std::size_t>(h) * w);
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double span = *hi - *lo;
  for (std::size_t i = 0; i < v.size(); ++i) out.data[i] = span > 0 ? (v[i] - *lo) / span : 0.0;
  return out;
}

std::vector<std::filesystem::path> visualize(const ViewSet& views, const QualityNet* net,
                                             const std::filesystem::path& dir) {
  check_view_set(views);
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;
  auto emit = [&](const std::string& name, auto&& writer) {
    const auto p = dir / name;
    writer(p);
    files.push_back(p);
  };
  for (int v = 0; v < kNumViews; ++v) {
    const std::string n = view_name(v);
    emit("texture_" + n + ".png", [&](const auto& p) { write_png(views.texture[v], p); });
    emit("depth_" + n + ".png", [&](const auto& p) { write_png16(views.depth[v], p); });
    emit("occupancy_" + n + ".png", [&](const auto& p) { write_png(views.occupancy[v], p); });
  }
  emit("views.json", [&](const auto& p) {
    nlohmann::json j;
    j["resolution"] = views.height();
    for (int v = 0; v < kNumViews; ++v) j["occupancy_ratio"][view_name(v)] = views.ratios[v];
    std::ofstream out(p);
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + p.string());
  });
  const StitchedInput s = stitch(views);
  emit("stitched_texture.png", [&](const auto& p) { write_png(channels(s.image, 0, 3), p); });
  emit("stitched_depth.png", [&](const auto& p) { write_png16(channels(s.image, 3, 1), p); });
  emit("stitched_occupancy.png", [&](const auto& p) { write_png(s.occupancy, p); });
  if (!net) return files;

  NoGradGuard guard;
  const ForwardTrace t = forward(*net, views);
  const int heads = static_cast<int>(t.stitched_attention.dim(0));
  for (int h = 0; h < heads; ++h) {
    emit("attention_head" + std::to_string(h) + ".png",
         [&](const auto& p) { write_png(heatmap(t.stitched_attention, h), p); });
    emit("enhanced_head" + std::to_string(h) + ".png", [&](const auto& p) { write_png(heatmap(t.enhanced, h), p); });
  }
  emit("mask.png", [&](const auto& p) { write_label_png(t.mask.mask, s.image.height, s.image.width, p); });
  emit("region_features.png", [&](const auto& p) { write_png(heatmap(t.region_features, 0), p); });
  return files;
}

}  // namespace pcqa
