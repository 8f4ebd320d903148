#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pcqa/tensor.hpp"

namespace pcqa {

/// A trainable tensor with its stable name. `pretrained` marks the optimizer
/// group that may be initialized from external weights.
struct NamedParam {
  std::string name;
  Tensor tensor;
  bool pretrained = false;
};

using ParamList = std::vector<NamedParam>;

// Initializers; all return leaf tensors with requires_grad set.
Tensor make_param(Shape shape, double fill);
/// Normal(0, std) truncated to +-2 std.
Tensor trunc_normal_param(Shape shape, double std, std::mt19937_64& rng);
/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor fan_in_uniform_param(Shape shape, std::int64_t fan_in, std::mt19937_64& rng);

/// Name -> tensor archive ("PCQATNSR" binary: count, then per entry name,
/// rank, int64 dims, float64 values).
using TensorArchive = std::map<std::string, Tensor>;

void save_archive(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive load_archive(const std::filesystem::path& path);
void write_archive(const TensorArchive& archive, std::ostream& out);
TensorArchive read_archive(std::istream& in, const std::string& what);

}  // namespace pcqa
