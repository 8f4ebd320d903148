#pragma once

#include <filesystem>
#include <vector>

#include "pcqa/model.hpp"
#include "pcqa/projector.hpp"

namespace pcqa {

/// 8-bit PNG of a 1- or 3-channel image with values clamped to [0, 1].
void write_png(const Image& im, const std::filesystem::path& path);
/// 16-bit grayscale PNG of channel 0 (depth keeps its precision).
void write_png16(const Image& im, const std::filesystem::path& path);
/// Palette PNG of a label map with values in [0, 255].
void write_label_png(const std::vector<int>& labels, int height, int width, const std::filesystem::path& path);

/// Min-max normalized copy of one channel of a [C,H,W] tensor.
Image heatmap(const Tensor& maps, int channel);

/// Writes the six views, a views.json with occupancy ratios, the stitched
/// mosaic and, with a model, the attention heads, enhanced maps and guided
/// mask into `dir`. Returns the files written.
std::vector<std::filesystem::path> visualize(const ViewSet& views, const QualityNet* net,
                                             const std::filesystem::path& dir);

}  // namespace pcqa
