#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pcqa/datapack.hpp"

namespace pcqa {

/// 1-based ranks, ascending; tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> v);

double pearson(std::span<const double> a, std::span<const double> b);
double srocc(std::span<const double> pred, std::span<const double> q);
double plcc(std::span<const double> pred, std::span<const double> q);
double rmse(std::span<const double> pred, std::span<const double> q);

/// psi(x) = b4 + (b1 - b4) / (1 + (x'/b3)^b2) with x' = scale * x + offset.
/// The affine pre-map is the identity unless some prediction is <= 0, in
/// which case predictions are moved to [1, 2].
struct Logistic4Params {
  double b1 = 0.0, b2 = 1.0, b3 = 1.0, b4 = 0.0;
  double scale = 1.0, offset = 0.0;
  bool identity = false;  // fallback: psi(x) = x

  double operator()(double x) const;
  std::vector<double> map(std::span<const double> x) const;
};

struct Logistic4Fit {
  Logistic4Params params;
  std::vector<double> mapped;
  bool converged = false;
  int evaluations = 0;
};

/// Damped least squares fit of psi; falls back to the identity with a warning
/// on constant predictions, fewer than 4 points, or non-convergence.
Logistic4Fit logistic4_fit(std::span<const double> pred, std::span<const double> q, int max_evaluations = 2000);

struct MetricReport {
  int fold = -1;  // -1 for an average over folds
  double plcc = 0.0;
  double srocc = 0.0;
  double rmse = 0.0;
  bool identity_mapping = false;
};

/// Logistic-4 mapping followed by PLCC/SROCC/RMSE on the mapped scores.
MetricReport score_predictions(std::span<const double> pred, std::span<const double> q, int fold = -1);

/// Score of one crop of sample `index`.
using CropScorer = std::function<double(std::size_t index, const ViewSet& crop)>;

/// Mean score over `crops` seeded crops per sample. crop_size >= the view
/// resolution scores the uncropped views once.
std::vector<double> crop_averaged_scores(const CropScorer& scorer, const std::vector<LabeledViews>& samples,
                                         int crop_size, int crops, std::uint64_t seed);

MetricReport evaluate(const CropScorer& scorer, const std::vector<LabeledViews>& samples, int crop_size, int crops,
                      std::uint64_t seed, int fold = -1);

MetricReport average_reports(const std::vector<MetricReport>& folds);

/// CSV `fold,plcc,srocc,rmse`; the average row uses fold "mean".
void write_reports_csv(std::ostream& out, const std::vector<MetricReport>& folds, const MetricReport* average);

}  // namespace pcqa
