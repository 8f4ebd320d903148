#pragma once

#include <cstdint>
#include <vector>

#include "pcqa/config.hpp"
#include "pcqa/feedback.hpp"
#include "pcqa/globalenc.hpp"
#include "pcqa/localenc.hpp"
#include "pcqa/objective.hpp"
#include "pcqa/params.hpp"
#include "pcqa/projector.hpp"

namespace pcqa {

/// Global transformer branch, feedback module, local branch and both heads.
struct QualityNet {
  ModelConfig config;
  EncoderWeights encoder;
  FeedbackWeights feedback;
  LocalWeights local;
  HeadWeights heads;

  static QualityNet init(ModelConfig cfg, std::uint64_t seed);
  /// Every trainable tensor, named; `pretrained` marks the encoder group.
  ParamList params() const;
  /// Deep copy of all parameter values into fresh leaves.
  QualityNet clone() const;
};

/// Every intermediate of one forward pass. Image-like tensors are [C, H, W].
struct ForwardTrace {
  std::vector<Tensor> class_attention;  // per view, [N_h, H/P, W/P]
  std::vector<Tensor> view_features;    // per view, [D_o]
  Tensor global;                        // f_g
  Tensor stitched_attention;            // A_s, [N_h, 2H/P, 3W/P]
  Tensor enhanced;                      // A_s times resized occupancy
  FilterBank filters;
  MaskPrediction mask;
  Tensor region_features;  // drconv output [16, 2H, 3W]
  LocalTrace local;
  QualityPrediction prediction;
};

Tensor image_tensor(const Image& im);

ForwardTrace forward(const QualityNet& net, const ViewSet& views);

/// q_f of one view set with gradient recording disabled.
double predict_fine(const QualityNet& net, const ViewSet& views);

TensorArchive to_archive(const ParamList& params);
/// Copies archive values into matching parameters; throws on missing names
/// or shape mismatches.
void load_params(const ParamList& params, const TensorArchive& archive);

}  // namespace pcqa
