#include "pcqa/cloudio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace pcqa {

namespace {

enum class ScalarType { kInt8, kUInt8, kInt16, kUInt16, kInt32, kUInt32, kFloat32, kFloat64 };

struct Property {
  std::string name;
  ScalarType type = ScalarType::kFloat32;
  bool is_list = false;
  ScalarType count_type = ScalarType::kUInt8;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> properties;
};

struct Header {
  PlyFormat format = PlyFormat::kAscii;
  std::vector<Element> elements;
};

bool parse_scalar_type(const std::string& s, ScalarType& out) {
  static const std::pair<const char*, ScalarType> kNames[] = {
      {"char", ScalarType::kInt8},     {"int8", ScalarType::kInt8},
      {"uchar", ScalarType::kUInt8},   {"uint8", ScalarType::kUInt8},
      {"short", ScalarType::kInt16},   {"int16", ScalarType::kInt16},
      {"ushort", ScalarType::kUInt16}, {"uint16", ScalarType::kUInt16},
      {"int", ScalarType::kInt32},     {"int32", ScalarType::kInt32},
      {"uint", ScalarType::kUInt32},   {"uint32", ScalarType::kUInt32},
      {"float", ScalarType::kFloat32}, {"float32", ScalarType::kFloat32},
      {"double", ScalarType::kFloat64}, {"float64", ScalarType::kFloat64},
  };
  for (const auto& [name, type] : kNames)
    if (s == name) {
      out = type;
      return true;
    }
  return false;
}

std::size_t type_size(ScalarType t) {
  switch (t) {
    case ScalarType::kInt8:
    case ScalarType::kUInt8: return 1;
    case ScalarType::kInt16:
    case ScalarType::kUInt16: return 2;
    case ScalarType::kInt32:
    case ScalarType::kUInt32:
    case ScalarType::kFloat32: return 4;
    case ScalarType::kFloat64: return 8;
  }
  return 0;
}

bool is_integer(ScalarType t) { return t != ScalarType::kFloat32 && t != ScalarType::kFloat64; }

template <typename T>
T read_le(const unsigned char* p) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

double decode(ScalarType t, const unsigned char* p) {
  switch (t) {
    case ScalarType::kInt8: return read_le<std::int8_t>(p);
    case ScalarType::kUInt8: return read_le<std::uint8_t>(p);
    case ScalarType::kInt16: return read_le<std::int16_t>(p);
    case ScalarType::kUInt16: return read_le<std::uint16_t>(p);
    case ScalarType::kInt32: return read_le<std::int32_t>(p);
    case ScalarType::kUInt32: return read_le<std::uint32_t>(p);
    case ScalarType::kFloat32: return read_le<float>(p);
    case ScalarType::kFloat64: return read_le<double>(p);
  }
  return 0.0;
}

[[noreturn]] void header_error(const std::filesystem::path& path, int line_no, const std::string& line,
                               const std::string& why) {
  throw ParseError(path.string() + ": header line " + std::to_string(line_no) + " '" + line + "': " + why);
}

Header read_header(std::istream& in, const std::filesystem::path& path) {
  Header h;
  std::string line;
  int line_no = 0;
  bool saw_format = false;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (!next() || line != "ply") header_error(path, 1, line, "missing 'ply' magic");
  while (true) {
    if (!next()) throw ParseError(path.string() + ": header not terminated by end_header");
    std::istringstream ss(line);
    std::string kw;
    ss >> kw;
    if (kw.empty() || kw == "comment" || kw == "obj_info") continue;
    if (kw == "end_header") break;
    if (kw == "format") {
      std::string fmt, version;
      ss >> fmt >> version;
      if (fmt == "ascii") {
        h.format = PlyFormat::kAscii;
      } else if (fmt == "binary_little_endian") {
        h.format = PlyFormat::kBinaryLittleEndian;
      } else {
        header_error(path, line_no, line, "unsupported format '" + fmt + "'");
      }
      if (version != "1.0") header_error(path, line_no, line, "unsupported version");
      saw_format = true;
    } else if (kw == "element") {
      Element e;
      long long count = -1;
      ss >> e.name >> count;
      if (e.name.empty() || ss.fail() || count < 0) header_error(path, line_no, line, "bad element declaration");
      e.count = static_cast<std::size_t>(count);
      h.elements.push_back(std::move(e));
    } else if (kw == "property") {
      if (h.elements.empty()) header_error(path, line_no, line, "property before any element");
      Property p;
      std::string type;
      ss >> type;
      if (type == "list") {
        std::string count_type, item_type;
        ss >> count_type >> item_type >> p.name;
        p.is_list = true;
        if (!parse_scalar_type(count_type, p.count_type) || !parse_scalar_type(item_type, p.type) ||
            !is_integer(p.count_type))
          header_error(path, line_no, line, "bad list property types");
      } else {
        ss >> p.name;
        if (!parse_scalar_type(type, p.type)) header_error(path, line_no, line, "unknown type '" + type + "'");
      }
      if (p.name.empty()) header_error(path, line_no, line, "property without a name");
      h.elements.back().properties.push_back(std::move(p));
    } else {
      header_error(path, line_no, line, "unknown keyword '" + kw + "'");
    }
  }
  if (!saw_format) throw ParseError(path.string() + ": header has no format line");
  return h;
}

struct VertexLayout {
  int x = -1, y = -1, z = -1;
  int r = -1, g = -1, b = -1;
  bool color_is_float = false;
  double color_scale = 1.0;
};

VertexLayout locate(const Element& v, const std::filesystem::path& path) {
  VertexLayout l;
  for (std::size_t i = 0; i < v.properties.size(); ++i) {
    const auto& p = v.properties[i];
    const int idx = static_cast<int>(i);
    if (p.is_list) continue;
    if (p.name == "x") l.x = idx;
    else if (p.name == "y") l.y = idx;
    else if (p.name == "z") l.z = idx;
    else if (p.name == "red" || p.name == "r") l.r = idx;
    else if (p.name == "green" || p.name == "g") l.g = idx;
    else if (p.name == "blue" || p.name == "b") l.b = idx;
  }
  if (l.x < 0 || l.y < 0 || l.z < 0) throw ParseError(path.string() + ": vertex element lacks x, y, z");
  if (l.r < 0 || l.g < 0 || l.b < 0)
    throw ParseError(path.string() + ": vertex element lacks color properties (red/green/blue or r/g/b)");
  const ScalarType ct = v.properties[static_cast<std::size_t>(l.r)].type;
  for (int c : {l.g, l.b})
    if (v.properties[static_cast<std::size_t>(c)].type != ct)
      throw ParseError(path.string() + ": color channels have mixed types");
  if (is_integer(ct)) {
    l.color_scale = ct == ScalarType::kUInt16 ? 1.0 / 65535.0 : 1.0 / 255.0;
  } else {
    l.color_is_float = true;
  }
  return l;
}

void store_vertex(PointCloud& pc, const std::vector<double>& vals, const VertexLayout& l,
                  const std::filesystem::path& path, std::size_t index) {
  Vec3 pos{vals[l.x], vals[l.y], vals[l.z]};
  Vec3 col{vals[l.r] * l.color_scale, vals[l.g] * l.color_scale, vals[l.b] * l.color_scale};
  for (double c : col)
    if (!(c >= 0.0 && c <= 1.0))
      throw ParseError(path.string() + ": vertex " + std::to_string(index) + " color out of range");
  for (double p : pos)
    if (!std::isfinite(p))
      throw ParseError(path.string() + ": vertex " + std::to_string(index) + " has a non-finite coordinate");
  pc.positions.push_back(pos);
  pc.colors.push_back(col);
}

void read_ascii(std::istream& in, const Header& h, PointCloud& pc, const std::filesystem::path& path) {
  std::string line;
  for (const auto& e : h.elements) {
    const bool is_vertex = e.name == "vertex";
    VertexLayout layout;
    if (is_vertex) layout = locate(e, path);
    std::vector<double> vals(e.properties.size());
    for (std::size_t i = 0; i < e.count; ++i) {
      if (!std::getline(in, line))
        throw ParseError(path.string() + ": element '" + e.name + "' declares " + std::to_string(e.count) +
                         " entries, file ends after " + std::to_string(i));
      std::istringstream ss(line);
      for (std::size_t p = 0; p < e.properties.size(); ++p) {
        const auto& prop = e.properties[p];
        if (prop.is_list) {
          long long n = -1;
          ss >> n;
          double skip;
          for (long long k = 0; k < n; ++k) ss >> skip;
        } else {
          ss >> vals[p];
        }
        if (ss.fail())
          throw ParseError(path.string() + ": malformed '" + e.name + "' entry " + std::to_string(i) + ": '" +
                           line + "'");
      }
      if (is_vertex) store_vertex(pc, vals, layout, path, i);
    }
  }
}

void read_binary(std::istream& in, const Header& h, PointCloud& pc, const std::filesystem::path& path) {
  std::vector<unsigned char> buf;
  for (const auto& e : h.elements) {
    const bool is_vertex = e.name == "vertex";
    VertexLayout layout;
    if (is_vertex) layout = locate(e, path);
    std::vector<double> vals(e.properties.size());
    for (std::size_t i = 0; i < e.count; ++i) {
      for (std::size_t p = 0; p < e.properties.size(); ++p) {
        const auto& prop = e.properties[p];
        auto fetch = [&](std::size_t n) {
          buf.resize(n);
          if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n)))
            throw ParseError(path.string() + ": element '" + e.name + "' declares " + std::to_string(e.count) +
                             " entries, data ends inside entry " + std::to_string(i));
        };
        if (prop.is_list) {
          fetch(type_size(prop.count_type));
          const auto n = static_cast<std::size_t>(decode(prop.count_type, buf.data()));
          fetch(n * type_size(prop.type));
        } else {
          fetch(type_size(prop.type));
          vals[p] = decode(prop.type, buf.data());
        }
      }
      if (is_vertex) store_vertex(pc, vals, layout, path, i);
    }
  }
}

}  // namespace

void validate(const PointCloud& pc) {
  if (pc.positions.empty()) throw std::invalid_argument("point cloud is empty");
  if (pc.colors.size() != pc.positions.size())
    throw std::invalid_argument("point cloud has " + std::to_string(pc.colors.size()) + " colors for " +
                                std::to_string(pc.positions.size()) + " points");
  for (std::size_t i = 0; i < pc.size(); ++i) {
    for (double p : pc.positions[i])
      if (!std::isfinite(p)) throw std::invalid_argument("non-finite coordinate at point " + std::to_string(i));
    for (double c : pc.colors[i])
      if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("color out of [0,1] at point " + std::to_string(i));
  }
}

PointCloud load_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const Header h = read_header(in, path);
  const auto vit = std::find_if(h.elements.begin(), h.elements.end(), [](const Element& e) { return e.name == "vertex"; });
  if (vit == h.elements.end()) throw ParseError(path.string() + ": no vertex element");
  PointCloud pc;
  pc.name = path.stem().string();
  pc.positions.reserve(vit->count);
  pc.colors.reserve(vit->count);
  if (h.format == PlyFormat::kAscii) {
    read_ascii(in, h, pc, path);
  } else {
    read_binary(in, h, pc, path);
  }
  if (pc.positions.empty()) throw ParseError(path.string() + ": vertex element is empty");
  return pc;
}

void write_ply(const PointCloud& pc, const std::filesystem::path& path, PlyFormat format) {
  validate(pc);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "ply\n"
      << (format == PlyFormat::kAscii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n")
      << "comment written by pcqa\n"
      << "element vertex " << pc.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "end_header\n";
  auto quantize = [](double c) { return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0)); };
  if (format == PlyFormat::kAscii) {
    out.precision(17);
    for (std::size_t i = 0; i < pc.size(); ++i) {
      const auto& p = pc.positions[i];
      const auto& c = pc.colors[i];
      out << p[0] << ' ' << p[1] << ' ' << p[2] << ' ' << int(quantize(c[0])) << ' ' << int(quantize(c[1])) << ' '
          << int(quantize(c[2])) << '\n';
    }
  } else {
    for (std::size_t i = 0; i < pc.size(); ++i) {
      out.write(reinterpret_cast<const char*>(pc.positions[i].data()), 3 * sizeof(double));
      const std::uint8_t rgb[3] = {quantize(pc.colors[i][0]), quantize(pc.colors[i][1]), quantize(pc.colors[i][2])};
      out.write(reinterpret_cast<const char*>(rgb), 3);
    }
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Vec3 extents(const PointCloud& pc) {
  Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity()};
  Vec3 hi{-lo[0], -lo[1], -lo[2]};
  for (const auto& p : pc.positions)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]};
}

PointCloud canonicalize(const PointCloud& pc) {
  validate(pc);
  Vec3 lo = pc.positions[0], hi = pc.positions[0];
  for (const auto& p : pc.positions)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  const double longest = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  if (!(longest > 0.0)) throw std::invalid_argument("degenerate point cloud: all points coincide");
  const Vec3 center{0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])};
  const double s = 2.0 / longest;
  PointCloud out = pc;
  for (auto& p : out.positions)
    for (int a = 0; a < 3; ++a) p[a] = (p[a] - center[a]) * s;
  return out;
}

}  // namespace pcqa
