#include "pcqa/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "pcqa/cloudio.hpp"

namespace pcqa {

namespace {
constexpr char kArchiveMagic[8] = {'P', 'C', 'Q', 'A', 'T', 'N', 'S', 'R'};
}

Tensor make_param(Shape shape, double fill) { return Tensor(std::move(shape), fill, true); }

Tensor trunc_normal_param(Shape shape, double std, std::mt19937_64& rng) {
  Tensor t(std::move(shape), 0.0, true);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : t.data()) {
    double z;
    do z = normal(rng);
    while (std::abs(z) > 2.0);
    v = z * std;
  }
  return t;
}

Tensor fan_in_uniform_param(Shape shape, std::int64_t fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape), 0.0, true);
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::int64_t>(fan_in, 1)));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

void write_archive(const TensorArchive& archive, std::ostream& out) {
  out.write(kArchiveMagic, sizeof kArchiveMagic);
  const std::uint64_t count = archive.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  for (const auto& [name, t] : archive) {
    const std::uint32_t len = static_cast<std::uint32_t>(name.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(name.data(), len);
    const std::uint32_t rank = static_cast<std::uint32_t>(t.rank());
    out.write(reinterpret_cast<const char*>(&rank), sizeof rank);
    out.write(reinterpret_cast<const char*>(t.shape().data()), static_cast<std::streamsize>(rank * sizeof(std::int64_t)));
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
}

TensorArchive read_archive(std::istream& in, const std::string& what) {
  auto fail = [&](const std::string& why) -> ParseError { return ParseError(what + ": " + why); };
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kArchiveMagic, sizeof magic) != 0)
    throw fail("not a tensor archive");
  std::uint64_t count = 0;
  if (!in.read(reinterpret_cast<char*>(&count), sizeof count)) throw fail("truncated header");
  TensorArchive archive;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t len = 0, rank = 0;
    if (!in.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1u << 16)) throw fail("bad entry name");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in.read(reinterpret_cast<char*>(&rank), sizeof rank) || rank > 8) throw fail("bad rank for " + name);
    Shape shape(rank);
    in.read(reinterpret_cast<char*>(shape.data()), static_cast<std::streamsize>(rank * sizeof(std::int64_t)));
    if (!in) throw fail("truncated shape for " + name);
    std::vector<double> values(static_cast<std::size_t>(shape_numel(shape)));
    if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double))))
      throw fail("truncated data for " + name);
    archive.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return archive;
}

void save_archive(const TensorArchive& archive, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    write_archive(archive, out);
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_archive(in, path.string());
}

}  // namespace pcqa
