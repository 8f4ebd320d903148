#pragma once

#include <vector>

#include "pcqa/params.hpp"

namespace pcqa {

struct AdamConfig {
  double lr_pretrained = 2e-5;
  double lr_rest = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;  // L2 penalty added to the gradient
  double decay = 0.9;          // step schedule factor
  int decay_every = 5;         // epochs per schedule step
};

/// Adam over two parameter groups (pretrained encoder vs the rest) with a
/// step learning-rate schedule.
class Adam {
 public:
  Adam(ParamList params, AdamConfig cfg);

  /// Learning rate of a group during `epoch` (0-based).
  double lr(bool pretrained, int epoch) const;
  void step(int epoch);
  void zero_grad();

  const ParamList& params() const { return params_; }
  long steps() const { return steps_; }

  /// Moments as "adam.m.<name>" / "adam.v.<name>" plus the step count.
  TensorArchive state() const;
  void load_state(const TensorArchive& archive);

 private:
  ParamList params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long steps_ = 0;
};

}  // namespace pcqa
