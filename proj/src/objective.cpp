#include "pcqa/objective.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <stdexcept>

#include "pcqa/evalkit.hpp"
#include "pcqa/ops.hpp"

namespace pcqa {

namespace {

constexpr double kNormFloor = 1e-12;

// Pool-adjacent-violators for min ||v - y||^2 s.t. v nonincreasing. Returns
// the block id of every entry and fills the fitted values.
std::vector<std::size_t> pav_decreasing(const std::vector<double>& y, std::vector<double>& v) {
  std::vector<double> sum;
  std::vector<std::size_t> start, len;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sum.push_back(y[i]);
    start.push_back(i);
    len.push_back(1);
    while (sum.size() > 1) {
      const std::size_t b = sum.size() - 1;
      if (sum[b - 1] / len[b - 1] >= sum[b] / len[b]) break;
      sum[b - 1] += sum[b];
      len[b - 1] += len[b];
      sum.pop_back();
      start.pop_back();
      len.pop_back();
    }
  }
  v.assign(y.size(), 0.0);
  std::vector<std::size_t> block(y.size());
  for (std::size_t b = 0; b < sum.size(); ++b)
    for (std::size_t i = start[b]; i < start[b] + len[b]; ++i) {
      v[i] = sum[b] / len[b];
      block[i] = b;
    }
  return block;
}

}  // namespace

HeadWeights HeadWeights::init(int d_out, std::mt19937_64& rng) {
  if (d_out < 1) throw std::invalid_argument("head width must be >= 1");
  HeadWeights w;
  w.coarse_w = fan_in_uniform_param({1, d_out}, d_out, rng);
  w.coarse_b = fan_in_uniform_param({1}, d_out, rng);
  w.fine_w = fan_in_uniform_param({1, 2 * d_out}, 2 * d_out, rng);
  w.fine_b = fan_in_uniform_param({1}, 2 * d_out, rng);
  return w;
}

void HeadWeights::collect(ParamList& out) const {
  out.push_back({"head.coarse.weight", coarse_w, false});
  out.push_back({"head.coarse.bias", coarse_b, false});
  out.push_back({"head.fine.weight", fine_w, false});
  out.push_back({"head.fine.bias", fine_b, false});
}

QualityPrediction predict_heads(const Tensor& f_g, const Tensor& f_l, const HeadWeights& w) {
  const auto d = f_g.numel();
  if (f_l.numel() != d || w.coarse_w.dim(1) != d)
    throw std::invalid_argument("predict_heads: feature widths " + shape_str(f_g.shape()) + " and " +
                                shape_str(f_l.shape()) + " vs head " + shape_str(w.coarse_w.shape()));
  const Tensor g = ops::reshape(f_g, {1, d});
  const Tensor gl = ops::concat_cols({g, ops::reshape(f_l, {1, d})});
  QualityPrediction p;
  p.coarse = ops::reshape(ops::linear(g, w.coarse_w, w.coarse_b), {});
  p.fine = ops::reshape(ops::linear(gl, w.fine_w, w.fine_b), {});
  return p;
}

Tensor loss_dis(const Tensor& f_g, const Tensor& f_l) {
  if (f_g.shape() != f_l.shape()) throw std::invalid_argument("loss_dis: feature shapes differ");
  const Tensor gg = ops::dot(f_g, f_g), ll = ops::dot(f_l, f_l);
  if (std::sqrt(gg.item()) < kNormFloor || std::sqrt(ll.item()) < kNormFloor) {
    spdlog::warn("loss_dis: degenerate feature norm, term set to 0");
    return Tensor::scalar(0.0);
  }
  const Tensor cosine = ops::div_scalar(ops::dot(f_g, f_l), ops::sqrt(ops::mul(gg, ll)));
  return ops::relu(cosine);
}

Tensor loss_reg(const std::vector<QualityPrediction>& preds, std::span<const double> q) {
  if (preds.empty() || preds.size() != q.size()) throw std::invalid_argument("loss_reg: batch size mismatch");
  std::vector<Tensor> coarse, fine;
  for (const auto& p : preds) {
    coarse.push_back(p.coarse);
    fine.push_back(p.fine);
  }
  const Tensor target(Shape{static_cast<std::int64_t>(q.size())}, std::vector<double>(q.begin(), q.end()));
  const Tensor rc = ops::sub(ops::stack_scalars(coarse), target);
  const Tensor rf = ops::sub(ops::stack_scalars(fine), target);
  return ops::add(ops::mean(ops::mul(rc, rc)), ops::mean(ops::mul(rf, rf)));
}

Tensor soft_rank(const Tensor& theta, double epsilon) {
  if (theta.rank() != 1) throw std::invalid_argument("soft_rank expects a vector");
  if (!(epsilon > 0.0)) throw std::invalid_argument("soft_rank: epsilon must be positive");
  const auto n = static_cast<std::size_t>(theta.numel());
  auto th = theta.data();
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = th[i] / epsilon;
  std::vector<std::size_t> order(n);  // order[j] = index of the j-th largest z
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });
  std::vector<double> y(n), v;
  for (std::size_t j = 0; j < n; ++j) y[j] = z[order[j]] - static_cast<double>(n - j);
  auto block = std::make_shared<std::vector<std::size_t>>(pav_decreasing(y, v));
  std::vector<double> r(n);
  for (std::size_t j = 0; j < n; ++j) r[order[j]] = z[order[j]] - v[j];
  auto ord = std::make_shared<std::vector<std::size_t>>(std::move(order));
  return Tensor::make_result(theta.shape(), std::move(r), {theta},
                             [theta, block, ord, epsilon](std::span<const double> g) {
                               Tensor t = theta;
                               auto gt = t.grad();
                               const auto& b = *block;
                               const auto& o = *ord;
                               const std::size_t n = o.size();
                               std::vector<double> bsum(b.empty() ? 0 : b.back() + 1, 0.0);
                               std::vector<double> bcnt(bsum.size(), 0.0);
                               for (std::size_t j = 0; j < n; ++j) {
                                 bsum[b[j]] += g[o[j]];
                                 bcnt[b[j]] += 1.0;
                               }
                               for (std::size_t j = 0; j < n; ++j)
                                 gt[o[j]] += (g[o[j]] - bsum[b[j]] / bcnt[b[j]]) / epsilon;
                             });
}

Tensor soft_spearman(const Tensor& pred, std::span<const double> q, double epsilon) {
  if (pred.rank() != 1 || static_cast<std::size_t>(pred.numel()) != q.size())
    throw std::invalid_argument("soft_spearman: prediction and target lengths differ");
  if (q.size() < 2) throw std::invalid_argument("soft_spearman: need at least 2 samples");
  if (std::all_of(q.begin(), q.end(), [&](double v) { return v == q[0]; }))
    throw std::invalid_argument("soft_spearman: constant targets have no rank correlation");
  const Tensor r = soft_rank(pred, epsilon);
  const auto hq = average_ranks(q);
  const double n = static_cast<double>(q.size());
  const double mh = std::accumulate(hq.begin(), hq.end(), 0.0) / n;
  std::vector<double> hc(hq.size());
  double hnorm = 0.0;
  for (std::size_t i = 0; i < hq.size(); ++i) {
    hc[i] = hq[i] - mh;
    hnorm += hc[i] * hc[i];
  }
  hnorm = std::sqrt(hnorm);
  // Soft ranks of any vector sum to n(n+1)/2, so their mean is fixed.
  auto rv = r.data();
  const double mr = (n + 1.0) / 2.0;
  std::vector<double> rc(rv.size());
  double rnorm = 0.0, cross = 0.0;
  for (std::size_t i = 0; i < rv.size(); ++i) {
    rc[i] = rv[i] - mr;
    rnorm += rc[i] * rc[i];
    cross += rc[i] * hc[i];
  }
  rnorm = std::sqrt(rnorm);
  if (rnorm < kNormFloor) {
    spdlog::warn("soft_spearman: soft ranks are all tied, correlation set to 0");
    return Tensor::make_result(Shape{}, {0.0}, {r}, [](std::span<const double>) {});
  }
  const double rho = cross / (rnorm * hnorm);
  return Tensor::make_result(Shape{}, {rho}, {r}, [r, rc, hc, rnorm, hnorm, rho](std::span<const double> g) {
    Tensor rt = r;
    auto gr = rt.grad();
    for (std::size_t i = 0; i < rc.size(); ++i)
      gr[i] += g[0] * (hc[i] / (rnorm * hnorm) - rho * rc[i] / (rnorm * rnorm));
  });
}

Tensor loss_rank(const Tensor& coarse, const Tensor& fine, std::span<const double> q, double epsilon,
                 bool detach_coarse) {
  if (q.size() < 2) {
    spdlog::warn("loss_rank: batch of {} has no ranking, term set to 0", q.size());
    return Tensor::scalar(0.0);
  }
  const Tensor sc = soft_spearman(detach_coarse ? coarse.detach() : coarse, q, epsilon);
  const Tensor sf = soft_spearman(fine, q, epsilon);
  return ops::relu(ops::sub(sc, sf));
}

LossReport total_loss(const Tensor& reg, const Tensor& dis, const Tensor& rank, double lambda_dis,
                      double lambda_rank) {
  if (lambda_dis < 0.0 || lambda_rank < 0.0) throw std::invalid_argument("loss weights must be non-negative");
  LossReport r;
  r.lambda_dis = lambda_dis;
  r.lambda_rank = lambda_rank;
  r.reg = reg.item();
  r.dis = dis.item();
  r.rank = rank.item();
  r.loss = ops::add(ops::add(reg, ops::scale(dis, lambda_dis)), ops::scale(rank, lambda_rank));
  r.total = r.loss.item();
  return r;
}

LossReport batch_objective(const std::vector<QualityPrediction>& preds, const std::vector<Tensor>& global_features,
                           const std::vector<Tensor>& local_features, std::span<const double> q,
                           const ObjectiveConfig& cfg) {
  const std::size_t b = preds.size();
  if (b == 0 || global_features.size() != b || local_features.size() != b || q.size() != b)
    throw std::invalid_argument("batch_objective: inconsistent batch");
  std::vector<Tensor> dis;
  std::vector<Tensor> coarse, fine;
  for (std::size_t i = 0; i < b; ++i) {
    dis.push_back(loss_dis(global_features[i], local_features[i]));
    coarse.push_back(preds[i].coarse);
    fine.push_back(preds[i].fine);
  }
  const Tensor l_dis = ops::mean(ops::stack_scalars(dis));
  const Tensor l_reg = loss_reg(preds, q);
  Tensor l_rank = Tensor::scalar(0.0);
  if (b < 2) {
    static std::once_flag once;
    std::call_once(once, [] { spdlog::warn("loss_rank: batch of 1 has no ranking, term set to 0"); });
  } else if (std::all_of(q.begin(), q.end(), [&](double v) { return v == q[0]; })) {
    spdlog::warn("loss_rank: batch targets are all equal, term set to 0");
  } else {
    l_rank = loss_rank(ops::stack_scalars(coarse), ops::stack_scalars(fine), q, cfg.softrank_epsilon,
                       cfg.detach_coarse_rank);
  }
  return total_loss(l_reg, l_dis, l_rank, cfg.lambda_dis, cfg.lambda_rank);
}

}  // namespace pcqa
