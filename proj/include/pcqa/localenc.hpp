#pragma once

#include <random>

#include "pcqa/params.hpp"
#include "pcqa/tensor.hpp"

namespace pcqa {

struct LocalConfig {
  int in_channels = 16;
  int hidden = 64;
  int d_out = 256;
};

struct LocalWeights {
  LocalConfig config;
  Tensor conv3_w, conv3_b;  // [64, 16, 3, 3]
  Tensor conv1_w, conv1_b;  // [D_o, 64, 1, 1]

  static LocalWeights init(const LocalConfig& cfg, std::mt19937_64& rng);
  void collect(ParamList& out) const;
};

struct LocalTrace {
  Tensor conv3;    // [64, 2H, 3W]
  Tensor pooled;   // [64, H, 3W/2]
  Tensor conv1;    // [D_o, H, 3W/2]
  Tensor feature;  // [D_o]
};

/// 3x3 conv + ReLU, 2x2 max pool, 1x1 conv + ReLU, global max pool.
LocalTrace local_feature(const Tensor& region_features, const LocalWeights& w);

}  // namespace pcqa
