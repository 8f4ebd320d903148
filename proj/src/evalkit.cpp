#include "pcqa/evalkit.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <unsupported/Eigen/NonLinearOptimization>

namespace pcqa {

namespace {

void require_pair(std::span<const double> a, std::span<const double> b, std::size_t min_len, const char* what) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(what) + ": length mismatch " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  if (a.size() < min_len)
    throw std::invalid_argument(std::string(what) + ": need at least " + std::to_string(min_len) + " values");
}

struct Logistic4Functor {
  using Scalar = double;
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

  const std::vector<double>& log_x;
  std::span<const double> q;

  int inputs() const { return 4; }
  int values() const { return static_cast<int>(q.size()); }

  // p = (b1, b2, log b3, b4).
  int operator()(const Eigen::VectorXd& p, Eigen::VectorXd& r) const {
    for (int i = 0; i < values(); ++i) {
      const double u = std::exp(p[1] * (log_x[i] - p[2]));
      r[i] = p[3] + (p[0] - p[3]) / (1.0 + u) - q[i];
    }
    return 0;
  }

  int df(const Eigen::VectorXd& p, Eigen::MatrixXd& j) const {
    for (int i = 0; i < values(); ++i) {
      const double lx = log_x[i] - p[2];
      const double u = std::exp(p[1] * lx);
      const double s = 1.0 / (1.0 + u);
      const double dpsi_du = -(p[0] - p[3]) * s * s;
      j(i, 0) = s;
      j(i, 1) = dpsi_du * u * lx;
      j(i, 2) = -dpsi_du * u * p[1];
      j(i, 3) = 1.0 - s;
    }
    return 0;
  }
};

Logistic4Fit identity_fit(std::span<const double> pred, const std::string& why) {
  spdlog::warn("logistic-4 fit: {}; using the identity mapping", why);
  Logistic4Fit f;
  f.params.identity = true;
  f.mapped.assign(pred.begin(), pred.end());
  return f;
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  require_pair(a, b, 2, "pearson");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw std::invalid_argument("correlation of a constant vector is undefined");
  return sab / std::sqrt(saa * sbb);
}

double srocc(std::span<const double> pred, std::span<const double> q) {
  require_pair(pred, q, 2, "srocc");
  const auto rp = average_ranks(pred), rq = average_ranks(q);
  return pearson(rp, rq);
}

double plcc(std::span<const double> pred, std::span<const double> q) {
  require_pair(pred, q, 2, "plcc");
  return pearson(pred, q);
}

double rmse(std::span<const double> pred, std::span<const double> q) {
  require_pair(pred, q, 1, "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - q[i]) * (pred[i] - q[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

double Logistic4Params::operator()(double x) const {
  if (identity) return x;
  const double xs = scale * x + offset;
  return b4 + (b1 - b4) / (1.0 + std::pow(xs / b3, b2));
}

std::vector<double> Logistic4Params::map(std::span<const double> x) const {
  std::vector<double> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [this](double v) { return (*this)(v); });
  return out;
}

Logistic4Fit logistic4_fit(std::span<const double> pred, std::span<const double> q, int max_evaluations) {
  require_pair(pred, q, 1, "logistic4_fit");
  if (pred.size() < 4) return identity_fit(pred, "fewer than 4 points");
  const auto [lo, hi] = std::minmax_element(pred.begin(), pred.end());
  if (*lo == *hi) return identity_fit(pred, "constant predictions");

  Logistic4Params base;
  if (*lo <= 0.0) {
    base.scale = 1.0 / (*hi - *lo);
    base.offset = 1.0 - *lo * base.scale;
  }
  std::vector<double> xs(pred.size()), log_x(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    xs[i] = base.scale * pred[i] + base.offset;
    log_x[i] = std::log(xs[i]);
  }
  std::vector<double> sorted = xs;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  const double median = sorted[sorted.size() / 2];
  const double qmax = *std::max_element(q.begin(), q.end()), qmin = *std::min_element(q.begin(), q.end());

  Logistic4Functor functor{log_x, q};
  Logistic4Fit best;
  double best_sse = std::numeric_limits<double>::infinity();
  // The data-driven start is a decreasing curve; its mirror covers scores
  // that grow with quality.
  for (double b2 : {1.0, -1.0}) {
    Eigen::VectorXd p(4);
    p << qmax, b2, std::log(median), qmin;
    Eigen::LevenbergMarquardt<Logistic4Functor> lm(functor);
    lm.parameters.maxfev = max_evaluations;
    lm.parameters.xtol = 1e-14;
    lm.parameters.ftol = 1e-14;
    const auto status = lm.minimize(p);
    const bool ok = status == Eigen::LevenbergMarquardtSpace::RelativeReductionTooSmall ||
                    status == Eigen::LevenbergMarquardtSpace::RelativeErrorTooSmall ||
                    status == Eigen::LevenbergMarquardtSpace::RelativeErrorAndReductionTooSmall ||
                    status == Eigen::LevenbergMarquardtSpace::CosinusTooSmall ||
                    status == Eigen::LevenbergMarquardtSpace::XtolTooSmall ||
                    status == Eigen::LevenbergMarquardtSpace::FtolTooSmall ||
                    status == Eigen::LevenbergMarquardtSpace::GtolTooSmall;
    if (!ok || !p.allFinite()) continue;
    Eigen::VectorXd r(q.size());
    functor(p, r);
    const double sse = r.squaredNorm();
    if (!std::isfinite(sse) || sse >= best_sse) continue;
    best_sse = sse;
    best.params = base;
    best.params.b1 = p[0];
    best.params.b2 = p[1];
    best.params.b3 = std::exp(p[2]);
    best.params.b4 = p[3];
    best.converged = true;
    best.evaluations = static_cast<int>(lm.nfev);
  }
  if (!best.converged) return identity_fit(pred, "no convergence within " + std::to_string(max_evaluations) +
                                                     " evaluations");
  best.mapped = best.params.map(pred);
  return best;
}

MetricReport score_predictions(std::span<const double> pred, std::span<const double> q, int fold) {
  require_pair(pred, q, 2, "score_predictions");
  const auto fit = logistic4_fit(pred, q);
  MetricReport r;
  r.fold = fold;
  r.identity_mapping = fit.params.identity;
  r.plcc = plcc(fit.mapped, q);
  r.srocc = srocc(fit.mapped, q);
  r.rmse = rmse(fit.mapped, q);
  return r;
}

std::vector<double> crop_averaged_scores(const CropScorer& scorer, const std::vector<LabeledViews>& samples,
                                         int crop_size, int crops, std::uint64_t seed) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty test set");
  if (crops < 1) throw std::invalid_argument("evaluate: crops must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<double> scores(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ViewSet& vs = samples[i].views;
    if (crop_size >= vs.height() && crop_size >= vs.width()) {
      scores[i] = scorer(i, vs);
      continue;
    }
    double s = 0.0;
    for (int c = 0; c < crops; ++c) s += scorer(i, crop_sample(vs, crop_size, rng));
    scores[i] = s / crops;
  }
  return scores;
}

MetricReport evaluate(const CropScorer& scorer, const std::vector<LabeledViews>& samples, int crop_size, int crops,
                      std::uint64_t seed, int fold) {
  const auto pred = crop_averaged_scores(scorer, samples, crop_size, crops, seed);
  std::vector<double> mos(samples.size());
  std::transform(samples.begin(), samples.end(), mos.begin(), [](const LabeledViews& s) { return s.mos; });
  return score_predictions(pred, mos, fold);
}

MetricReport average_reports(const std::vector<MetricReport>& folds) {
  if (folds.empty()) throw std::invalid_argument("average_reports: no folds");
  MetricReport avg;
  for (const auto& r : folds) {
    avg.plcc += r.plcc;
    avg.srocc += r.srocc;
    avg.rmse += r.rmse;
    avg.identity_mapping = avg.identity_mapping || r.identity_mapping;
  }
  const double n = static_cast<double>(folds.size());
  avg.plcc /= n;
  avg.srocc /= n;
  avg.rmse /= n;
  return avg;
}

void write_reports_csv(std::ostream& out, const std::vector<MetricReport>& folds, const MetricReport* average) {
  auto row = [&out](const std::string& fold, const MetricReport& r) {
    out << fold << ',' << fmt::format("{:.6f},{:.6f},{:.6f}", r.plcc, r.srocc, r.rmse) << '\n';
  };
  out << "fold,plcc,srocc,rmse\n";
  for (const auto& r : folds) row(std::to_string(r.fold), r);
  if (average) row("mean", *average);
}

}  // namespace pcqa
