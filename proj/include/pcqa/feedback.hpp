#pragma once

#include <random>
#include <string>
#include <vector>

#include "pcqa/params.hpp"
#include "pcqa/projector.hpp"
#include "pcqa/tensor.hpp"

namespace pcqa {

enum class Interpolation { kBilinear, kNearest };
Interpolation parse_interpolation(const std::string& s);
const char* to_string(Interpolation i);

struct FeedbackConfig {
  int heads = 12;
  int regions = 8;      // n
  int kernel_size = 3;  // k
  int in_channels = 4;  // stitched texture + depth
  int out_channels = 16;
  double st_temperature = 1.0;
  Interpolation interpolation = Interpolation::kBilinear;

  int filter_channels() const { return in_channels * out_channels * regions; }  // 64n
  void validate() const;
};

struct FeedbackWeights {
  FeedbackConfig config;
  Tensor mask_w, mask_b;  // [n, N_h, 3, 3]
  Tensor gen1_w, gen1_b;  // [n^2, N_h, 1, 1]
  Tensor gen2_w, gen2_b;  // [64n, n^2, 1, 1]

  static FeedbackWeights init(const FeedbackConfig& cfg, std::mt19937_64& rng);
  void collect(ParamList& out) const;
};

/// Area-average of a 1 x H x W occupancy image onto a grid_h x grid_w grid;
/// each cell holds its fraction of occupied pixels.
std::vector<double> resize_occupancy(const Image& occupancy, int grid_h, int grid_w);

/// Stitched attention [N_h, gh, gw] times the area-resized stitched occupancy.
Tensor enhance_attention(const Tensor& stitched_attention, const Image& stitched_occupancy);

/// Per-pixel region assignment plus everything the backward pass needs.
struct RegionPlan {
  int regions = 0;
  int kernel = 0;
  int height = 0;
  int width = 0;
  std::vector<int> mask;  // height*width, values in [0, regions)
  Tensor logits;          // [n, H, W], upsampled mask logits
  Tensor filters;         // [n, out, in, k, k]
};

struct MaskPrediction {
  Tensor grid_logits;  // [n, gh, gw] after the 3x3 conv
  Tensor logits;       // [n, H, W] after interpolation
  std::vector<int> mask;
};

/// Hard argmax over channels; ties go to the lowest channel index.
std::vector<int> argmax_channels(const Tensor& logits);

MaskPrediction predict_mask(const Tensor& enhanced, const FeedbackWeights& w, int out_h, int out_w);

struct FilterBank {
  Tensor pooled;   // [N_h, k, k]
  Tensor hidden;   // [n^2, k, k]
  Tensor raw;      // [64n, k, k]
  Tensor filters;  // [n, out, in, k, k]
};

/// Adaptive average pool to k x k, 1x1 conv to n^2, sigmoid, 1x1 conv to 64n.
/// Raw channel c feeds region c / 64, output (c % 64) / 4, input c % 4.
FilterBank generate_filters(const Tensor& enhanced, const FeedbackWeights& w);

/// Region-aware convolution with same zero padding. The forward pass is hard
/// (each pixel uses the filter group its mask selects). Filter gradients come
/// from the pixels of each region; mask-logit gradients use a temperature
/// softmax in place of the argmax.
Tensor drconv(const Tensor& image, const RegionPlan& plan, double temperature);

}  // namespace pcqa
