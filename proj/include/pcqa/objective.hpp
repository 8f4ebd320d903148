#pragma once

#include <random>
#include <span>
#include <vector>

#include "pcqa/params.hpp"
#include "pcqa/tensor.hpp"

namespace pcqa {

struct HeadWeights {
  Tensor coarse_w, coarse_b;  // [1, D_o], [1]
  Tensor fine_w, fine_b;      // [1, 2 D_o], [1]

  static HeadWeights init(int d_out, std::mt19937_64& rng);
  void collect(ParamList& out) const;
};

struct QualityPrediction {
  Tensor coarse;  // scalar q_c
  Tensor fine;    // scalar q_f
};

/// q_c = FC(f_g), q_f = FC(f_g ++ f_l).
QualityPrediction predict_heads(const Tensor& f_g, const Tensor& f_l, const HeadWeights& w);

struct ObjectiveConfig {
  double lambda_dis = 1.0;
  double lambda_rank = 1.0;
  double softrank_epsilon = 0.1;
  bool detach_coarse_rank = false;  // stop L_rank gradients into the coarse head
};

/// max(0, cos(f_g, f_l)); 0 with a warning when either norm is below 1e-12.
Tensor loss_dis(const Tensor& f_g, const Tensor& f_l);

/// MSE(q_c, q) + MSE(q_f, q) over the batch.
Tensor loss_reg(const std::vector<QualityPrediction>& preds, std::span<const double> q);

/// Ascending soft ranks (1 = smallest): the Euclidean projection of
/// theta / epsilon onto the permutahedron of (1, ..., n).
Tensor soft_rank(const Tensor& theta, double epsilon);

/// Pearson correlation between soft_rank(pred) and the average-tie ranks of
/// q. Throws on constant q or fewer than 2 entries.
Tensor soft_spearman(const Tensor& pred, std::span<const double> q, double epsilon);

/// max(0, ss(q_c, q) - ss(q_f, q)); 0 with a warning for batches below 2.
Tensor loss_rank(const Tensor& coarse, const Tensor& fine, std::span<const double> q, double epsilon,
                 bool detach_coarse = false);

struct LossReport {
  double reg = 0.0, dis = 0.0, rank = 0.0, total = 0.0;
  double lambda_dis = 1.0, lambda_rank = 1.0;
  Tensor loss;  // differentiable total
};

LossReport total_loss(const Tensor& reg, const Tensor& dis, const Tensor& rank, double lambda_dis,
                      double lambda_rank);

/// Full batch objective; `dis` averages loss_dis over the samples.
LossReport batch_objective(const std::vector<QualityPrediction>& preds, const std::vector<Tensor>& global_features,
                           const std::vector<Tensor>& local_features, std::span<const double> q,
                           const ObjectiveConfig& cfg);

}  // namespace pcqa
