#include "pcqa/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace pcqa::ops {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

void require_rank(const Tensor& a, int r, const char* op) {
  require(a.rank() == r, std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                             shape_str(a.shape()));
}

// Accumulates into t's grad when t participates in the graph.
template <typename F>
void accumulate(Tensor t, F&& f) {
  if (t.requires_grad()) f(t.grad());
}

template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& a, Fwd fwd, Bwd dfdx) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = fwd(v);
  return Tensor::make_result(a.shape(), std::move(out), {a}, [a, dfdx](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      auto x = a.data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * dfdx(x[i]);
    });
  });
}

constexpr std::int64_t kIm2colBudget = 1 << 22;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; });
    accumulate(b, [&](std::span<double> gb) { for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i]; });
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; });
    accumulate(b, [&](std::span<double> gb) { for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i]; });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      auto bv = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    });
    accumulate(b, [&](std::span<double> gb) {
      auto av = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    });
  });
}

Tensor scale(const Tensor& a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  require(s.numel() == 1, "mul_scalar: second operand must be a scalar");
  const double sv = s.item();
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= sv;
  return Tensor::make_result(a.shape(), std::move(out), {a, s}, [a, s](std::span<const double> g) {
    const double sv = s.item();
    accumulate(a, [&](std::span<double> ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv; });
    accumulate(s, [&](std::span<double> gs) {
      auto av = a.data();
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      gs[0] += acc;
    });
  });
}

Tensor div_scalar(const Tensor& a, const Tensor& s) {
  require(s.numel() == 1, "div_scalar: second operand must be a scalar");
  const double sv = s.item();
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v /= sv;
  return Tensor::make_result(a.shape(), std::move(out), {a, s}, [a, s](std::span<const double> g) {
    const double sv = s.item();
    accumulate(a, [&](std::span<double> ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / sv; });
    accumulate(s, [&](std::span<double> gs) {
      auto av = a.data();
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      gs[0] += -acc / (sv * sv);
    });
  });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double x) {
                 const double s = 1.0 / (1.0 + std::exp(-x));
                 return s * (1.0 - s);
               });
}

Tensor sqrt(const Tensor& a) {
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double x) { return 0.5 / std::sqrt(x); });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::make_result(Shape{}, {s}, {a}, [a](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) { for (auto& v : ga) v += g[0]; });
  });
}

Tensor mean(const Tensor& a) {
  require(a.numel() > 0, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.numel(),
          "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {a}, [a](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; });
  });
}

Tensor concat(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat of nothing");
  Shape tail(parts[0].shape().begin() + (parts[0].rank() ? 1 : 0), parts[0].shape().end());
  std::int64_t lead = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    require(p.rank() >= 1, "concat needs rank >= 1");
    require(Shape(p.shape().begin() + 1, p.shape().end()) == tail, "concat: trailing dims differ");
    lead += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Shape shape{lead};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return Tensor::make_result(std::move(shape), std::move(out), parts, [parts](std::span<const double> g) {
    std::size_t off = 0;
    for (auto p : parts) {
      const auto n = static_cast<std::size_t>(p.numel());
      accumulate(p, [&](std::span<double> gp) { for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i]; });
      off += n;
    }
  });
}

Tensor stack_scalars(const std::vector<Tensor>& scalars) {
  std::vector<Tensor> parts;
  parts.reserve(scalars.size());
  for (const auto& s : scalars) {
    require(s.numel() == 1, "stack_scalars: non-scalar input");
    parts.push_back(reshape(s, Shape{1}));
  }
  return concat(parts);
}

Tensor index(const Tensor& vec, std::int64_t i) {
  require(i >= 0 && i < vec.numel(), "index out of range");
  return Tensor::make_result(Shape{}, {vec.at(i)}, {vec}, [vec, i](std::span<const double> g) {
    accumulate(vec, [&](std::span<double> gv) { gv[static_cast<std::size_t>(i)] += g[0]; });
  });
}

Tensor weighted_mean(const std::vector<Tensor>& xs, const std::vector<double>& weights) {
  require(!xs.empty() && xs.size() == weights.size(), "weighted_mean: size mismatch");
  double total = 0.0;
  for (double w : weights) {
    require(w >= 0.0 && std::isfinite(w), "weighted_mean: weights must be finite and non-negative");
    total += w;
  }
  require(total > 0.0, "weighted_mean: weights sum to zero");
  const auto n = static_cast<std::size_t>(xs[0].numel());
  std::vector<double> out(n, 0.0);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    require_same(xs[k], xs[0], "weighted_mean");
    auto v = xs[k].data();
    for (std::size_t i = 0; i < n; ++i) out[i] += weights[k] * v[i];
  }
  for (auto& v : out) v /= total;
  return Tensor::make_result(xs[0].shape(), std::move(out), xs,
                             [xs, weights, total](std::span<const double> g) {
                               for (std::size_t k = 0; k < xs.size(); ++k) {
                                 const double c = weights[k] / total;
                                 accumulate(xs[k], [&](std::span<double> gx) {
                                   for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
                                 });
                               }
                             });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MapR(out.data(), m, n).noalias() = CMapR(a.data().data(), m, k) * CMapR(b.data().data(), k, n);
  return Tensor::make_result(Shape{m, n}, std::move(out), {a, b}, [a, b, m, k, n](std::span<const double> g) {
    CMapR G(g.data(), m, n);
    accumulate(a, [&](std::span<double> ga) {
      MapR(ga.data(), m, k).noalias() += G * CMapR(b.data().data(), k, n).transpose();
    });
    accumulate(b, [&](std::span<double> gb) {
      MapR(gb.data(), k, n).noalias() += CMapR(a.data().data(), m, k).transpose() * G;
    });
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const auto m = x.dim(0), in = x.dim(1), outd = w.dim(0);
  require(w.dim(1) == in, "linear: weight " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.numel() == outd, "linear: bias size");
  std::vector<double> out(static_cast<std::size_t>(m * outd));
  MapR Y(out.data(), m, outd);
  Y.noalias() = CMapR(x.data().data(), m, in) * CMapR(w.data().data(), outd, in).transpose();
  if (has_bias) Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), outd);
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return Tensor::make_result(
      Shape{m, outd}, std::move(out), inputs, [x, w, bias, has_bias, m, in, outd](std::span<const double> g) {
        CMapR G(g.data(), m, outd);
        accumulate(x, [&](std::span<double> gx) {
          MapR(gx.data(), m, in).noalias() += G * CMapR(w.data().data(), outd, in);
        });
        accumulate(w, [&](std::span<double> gw) {
          MapR(gw.data(), outd, in).noalias() += G.transpose() * CMapR(x.data().data(), m, in);
        });
        if (has_bias)
          accumulate(bias, [&](std::span<double> gb) {
            Eigen::Map<Eigen::RowVectorXd>(gb.data(), outd) += G.colwise().sum();
          });
      });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MapR(out.data(), n, m) = CMapR(a.data().data(), m, n).transpose();
  return Tensor::make_result(Shape{n, m}, std::move(out), {a}, [a, m, n](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      MapR(ga.data(), m, n) += CMapR(g.data(), n, m).transpose();
    });
  });
}

Tensor softmax_rows(const Tensor& a) {
  require_rank(a, 2, "softmax_rows");
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::int64_t r = 0; r < m; ++r) {
    double* row = out.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::int64_t c = 0; c < n; ++c) s += (row[c] = std::exp(row[c] - mx));
    for (std::int64_t c = 0; c < n; ++c) row[c] /= s;
  }
  auto saved = std::make_shared<std::vector<double>>(out);
  return Tensor::make_result(a.shape(), std::move(out), {a}, [a, saved, m, n](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      for (std::int64_t r = 0; r < m; ++r) {
        const double* y = saved->data() + r * n;
        const double* gr = g.data() + r * n;
        double s = 0.0;
        for (std::int64_t c = 0; c < n; ++c) s += gr[c] * y[c];
        for (std::int64_t c = 0; c < n; ++c) ga[static_cast<std::size_t>(r * n + c)] += y[c] * (gr[c] - s);
      }
    });
  });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 2, "layer_norm_rows");
  const auto m = x.dim(0), n = x.dim(1);
  require(gamma.numel() == n && beta.numel() == n, "layer_norm_rows: affine size");
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m * n));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  for (std::int64_t r = 0; r < m; ++r) {
    double mu = 0.0;
    for (std::int64_t c = 0; c < n; ++c) mu += xv[r * n + c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t c = 0; c < n; ++c) {
      const double d = xv[r * n + c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::int64_t c = 0; c < n; ++c) {
      const auto i = static_cast<std::size_t>(r * n + c);
      (*xhat)[i] = (xv[i] - mu) * is;
      out[i] = (*xhat)[i] * gv[c] + bv[c];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, m, n](std::span<const double> g) {
        accumulate(gamma, [&](std::span<double> gg) {
          for (std::int64_t r = 0; r < m; ++r)
            for (std::int64_t c = 0; c < n; ++c) gg[c] += g[r * n + c] * (*xhat)[r * n + c];
        });
        accumulate(beta, [&](std::span<double> gb) {
          for (std::int64_t r = 0; r < m; ++r)
            for (std::int64_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
        });
        accumulate(x, [&](std::span<double> gx) {
          auto gv = gamma.data();
          std::vector<double> dxhat(static_cast<std::size_t>(n));
          for (std::int64_t r = 0; r < m; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::int64_t c = 0; c < n; ++c) {
              dxhat[c] = g[r * n + c] * gv[c];
              s1 += dxhat[c];
              s2 += dxhat[c] * (*xhat)[r * n + c];
            }
            s1 /= static_cast<double>(n);
            s2 /= static_cast<double>(n);
            for (std::int64_t c = 0; c < n; ++c)
              gx[r * n + c] += (*inv_std)[r] * (dxhat[c] - s1 - (*xhat)[r * n + c] * s2);
          }
        });
      });
}

Tensor slice_rows(const Tensor& a, std::int64_t start, std::int64_t count) {
  require_rank(a, 2, "slice_rows");
  const auto m = a.dim(0), n = a.dim(1);
  require(start >= 0 && count >= 0 && start + count <= m, "slice_rows: out of range");
  std::vector<double> out(a.data().begin() + start * n, a.data().begin() + (start + count) * n);
  return Tensor::make_result(Shape{count, n}, std::move(out), {a}, [a, start, n](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[static_cast<std::size_t>(start * n) + i] += g[i];
    });
  });
}

Tensor slice_cols(const Tensor& a, std::int64_t start, std::int64_t count) {
  require_rank(a, 2, "slice_cols");
  const auto m = a.dim(0), n = a.dim(1);
  require(start >= 0 && count >= 0 && start + count <= n, "slice_cols: out of range");
  std::vector<double> out(static_cast<std::size_t>(m * count));
  MapR(out.data(), m, count) = CMapR(a.data().data(), m, n).middleCols(start, count);
  return Tensor::make_result(Shape{m, count}, std::move(out), {a}, [a, start, m, n, count](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      MapR(ga.data(), m, n).middleCols(start, count) += CMapR(g.data(), m, count);
    });
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols of nothing");
  const auto m = parts[0].dim(0);
  std::int64_t n = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    require(p.dim(0) == m, "concat_cols: row counts differ");
    n += p.dim(1);
  }
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MapR O(out.data(), m, n);
  std::int64_t off = 0;
  for (const auto& p : parts) {
    O.middleCols(off, p.dim(1)) = CMapR(p.data().data(), m, p.dim(1));
    off += p.dim(1);
  }
  return Tensor::make_result(Shape{m, n}, std::move(out), parts, [parts, m, n](std::span<const double> g) {
    CMapR G(g.data(), m, n);
    std::int64_t off = 0;
    for (auto p : parts) {
      const auto w = p.dim(1);
      accumulate(p, [&](std::span<double> gp) { MapR(gp.data(), m, w) += G.middleCols(off, w); });
      off += w;
    }
  });
}

namespace {

struct ConvGeom {
  std::int64_t c, h, w, o, kh, kw, oh, ow;
  int stride, pad;
  std::int64_t k() const { return c * kh * kw; }
};

// Fills cols [K, (r1-r0)*ow] for output rows [r0, r1).
void im2col(const double* x, const ConvGeom& g, std::int64_t r0, std::int64_t r1, double* cols) {
  const std::int64_t n = (r1 - r0) * g.ow;
  for (std::int64_t ci = 0; ci < g.c; ++ci)
    for (std::int64_t dy = 0; dy < g.kh; ++dy)
      for (std::int64_t dx = 0; dx < g.kw; ++dx) {
        double* row = cols + ((ci * g.kh + dy) * g.kw + dx) * n;
        for (std::int64_t oy = r0; oy < r1; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + dy;
          double* dst = row + (oy - r0) * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.ow, 0.0);
            continue;
          }
          const double* src = x + (ci * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + dx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
}

void col2im(const double* cols, const ConvGeom& g, std::int64_t r0, std::int64_t r1, double* dx_out) {
  const std::int64_t n = (r1 - r0) * g.ow;
  for (std::int64_t ci = 0; ci < g.c; ++ci)
    for (std::int64_t dy = 0; dy < g.kh; ++dy)
      for (std::int64_t dx = 0; dx < g.kw; ++dx) {
        const double* row = cols + ((ci * g.kh + dy) * g.kw + dx) * n;
        for (std::int64_t oy = r0; oy < r1; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + dy;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + (oy - r0) * g.ow;
          double* dst = dx_out + (ci * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + dx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
}

std::int64_t chunk_rows(const ConvGeom& g) {
  const std::int64_t per_row = std::max<std::int64_t>(1, g.k() * g.ow);
  return std::clamp<std::int64_t>(kIm2colBudget / per_row, 1, g.oh);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  require_rank(x, 3, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2), w.dim(3), 0, 0, stride, pad};
  require(w.dim(1) == g.c, "conv2d: weight " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
  g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
  g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
  require(g.oh > 0 && g.ow > 0, "conv2d: kernel larger than padded input");
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.numel() == g.o, "conv2d: bias size");

  const bool pointwise = g.kh == 1 && g.kw == 1 && stride == 1 && pad == 0;
  const std::int64_t plane = g.oh * g.ow;
  std::vector<double> out(static_cast<std::size_t>(g.o * plane));
  MapR Y(out.data(), g.o, plane);
  CMapR W(w.data().data(), g.o, g.k());
  if (pointwise) {
    Y.noalias() = W * CMapR(x.data().data(), g.c, plane);
  } else {
    const auto rows = chunk_rows(g);
    std::vector<double> cols(static_cast<std::size_t>(g.k() * rows * g.ow));
    for (std::int64_t r0 = 0; r0 < g.oh; r0 += rows) {
      const auto r1 = std::min(g.oh, r0 + rows);
      const auto n = (r1 - r0) * g.ow;
      im2col(x.data().data(), g, r0, r1, cols.data());
      Y.middleCols(r0 * g.ow, n).noalias() = W * CMapR(cols.data(), g.k(), n);
    }
  }
  if (has_bias) Y.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.data().data(), g.o);

  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return Tensor::make_result(
      Shape{g.o, g.oh, g.ow}, std::move(out), inputs,
      [x, w, bias, has_bias, g, pointwise, plane](std::span<const double> gout) {
        CMapR G(gout.data(), g.o, plane);
        if (has_bias)
          accumulate(bias, [&](std::span<double> gb) {
            Eigen::Map<Eigen::VectorXd>(gb.data(), g.o) += G.rowwise().sum();
          });
        if (!x.requires_grad() && !w.requires_grad()) return;
        CMapR W(w.data().data(), g.o, g.k());
        if (pointwise) {
          accumulate(w, [&](std::span<double> gw) {
            MapR(gw.data(), g.o, g.c).noalias() += G * CMapR(x.data().data(), g.c, plane).transpose();
          });
          accumulate(x, [&](std::span<double> gx) {
            MapR(gx.data(), g.c, plane).noalias() += W.transpose() * G;
          });
          return;
        }
        const auto rows = chunk_rows(g);
        std::vector<double> cols(static_cast<std::size_t>(g.k() * rows * g.ow));
        for (std::int64_t r0 = 0; r0 < g.oh; r0 += rows) {
          const auto r1 = std::min(g.oh, r0 + rows);
          const auto n = (r1 - r0) * g.ow;
          auto Gc = G.middleCols(r0 * g.ow, n);
          if (w.requires_grad()) {
            im2col(x.data().data(), g, r0, r1, cols.data());
            Tensor wt = w;
            MapR(wt.grad().data(), g.o, g.k()).noalias() += Gc * CMapR(cols.data(), g.k(), n).transpose();
          }
          if (x.requires_grad()) {
            MapR(cols.data(), g.k(), n).noalias() = W.transpose() * Gc;
            Tensor xt = x;
            col2im(cols.data(), g, r0, r1, xt.grad().data());
          }
        }
      });
}

Tensor patchify(const Tensor& x, int patch) {
  require_rank(x, 3, "patchify");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  require(patch >= 1 && h % patch == 0 && w % patch == 0,
          "patchify: patch " + std::to_string(patch) + " does not divide " + shape_str(x.shape()));
  const std::int64_t gh = h / patch, gw = w / patch, p = patch;
  const std::int64_t cols = c * p * p;
  // index map: out[i] = x[src[i]]
  auto src = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(gh * gw * cols));
  std::vector<double> out(src->size());
  auto xv = x.data();
  std::size_t i = 0;
  for (std::int64_t py = 0; py < gh; ++py)
    for (std::int64_t px = 0; px < gw; ++px)
      for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t dy = 0; dy < p; ++dy)
          for (std::int64_t dx = 0; dx < p; ++dx, ++i) {
            (*src)[i] = (ci * h + py * p + dy) * w + px * p + dx;
            out[i] = xv[(*src)[i]];
          }
  return Tensor::make_result(Shape{gh * gw, cols}, std::move(out), {x}, [x, src](std::span<const double> g) {
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[(*src)[i]] += g[i];
    });
  });
}

Tensor max_pool2d(const Tensor& x, int window, int stride) {
  require_rank(x, 3, "max_pool2d");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::int64_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  require(oh > 0 && ow > 0, "max_pool2d: window larger than input");
  auto arg = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(c * oh * ow));
  std::vector<double> out(arg->size());
  auto xv = x.data();
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t oy = 0; oy < oh; ++oy)
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        std::int64_t best = (ci * h + oy * stride) * w + ox * stride;
        for (int dy = 0; dy < window; ++dy)
          for (int dx = 0; dx < window; ++dx) {
            const auto idx = (ci * h + oy * stride + dy) * w + ox * stride + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        const auto o = static_cast<std::size_t>((ci * oh + oy) * ow + ox);
        (*arg)[o] = best;
        out[o] = xv[best];
      }
  return Tensor::make_result(Shape{c, oh, ow}, std::move(out), {x}, [x, arg](std::span<const double> g) {
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[(*arg)[i]] += g[i];
    });
  });
}

Tensor global_max_pool(const Tensor& x) {
  require_rank(x, 3, "global_max_pool");
  const auto c = x.dim(0), plane = x.dim(1) * x.dim(2);
  auto arg = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(c));
  std::vector<double> out(static_cast<std::size_t>(c));
  auto xv = x.data();
  for (std::int64_t ci = 0; ci < c; ++ci) {
    std::int64_t best = ci * plane;
    for (std::int64_t i = ci * plane; i < (ci + 1) * plane; ++i)
      if (xv[i] > xv[best]) best = i;
    (*arg)[ci] = best;
    out[ci] = xv[best];
  }
  return Tensor::make_result(Shape{c}, std::move(out), {x}, [x, arg](std::span<const double> g) {
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[(*arg)[i]] += g[i];
    });
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 3, "global_avg_pool");
  return reshape(adaptive_avg_pool(x, 1, 1), Shape{x.dim(0)});
}

Tensor adaptive_avg_pool(const Tensor& x, int out_h, int out_w) {
  require_rank(x, 3, "adaptive_avg_pool");
  require(out_h >= 1 && out_w >= 1, "adaptive_avg_pool: output size");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto bins = [](std::int64_t i, std::int64_t in, std::int64_t out) {
    const std::int64_t lo = (i * in) / out;
    const std::int64_t hi = ((i + 1) * in + out - 1) / out;
    return std::pair{lo, hi};
  };
  std::vector<double> out(static_cast<std::size_t>(c * out_h * out_w));
  auto xv = x.data();
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t oy = 0; oy < out_h; ++oy)
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        auto [y0, y1] = bins(oy, h, out_h);
        auto [x0, x1] = bins(ox, w, out_w);
        double s = 0.0;
        for (auto iy = y0; iy < y1; ++iy)
          for (auto ix = x0; ix < x1; ++ix) s += xv[(ci * h + iy) * w + ix];
        out[static_cast<std::size_t>((ci * out_h + oy) * out_w + ox)] =
            s / static_cast<double>((y1 - y0) * (x1 - x0));
      }
  return Tensor::make_result(
      Shape{c, out_h, out_w}, std::move(out), {x}, [x, c, h, w, out_h, out_w, bins](std::span<const double> g) {
        accumulate(x, [&](std::span<double> gx) {
          for (std::int64_t ci = 0; ci < c; ++ci)
            for (std::int64_t oy = 0; oy < out_h; ++oy)
              for (std::int64_t ox = 0; ox < out_w; ++ox) {
                auto [y0, y1] = bins(oy, h, out_h);
                auto [x0, x1] = bins(ox, w, out_w);
                const double v = g[static_cast<std::size_t>((ci * out_h + oy) * out_w + ox)] /
                                 static_cast<double>((y1 - y0) * (x1 - x0));
                for (auto iy = y0; iy < y1; ++iy)
                  for (auto ix = x0; ix < x1; ++ix) gx[(ci * h + iy) * w + ix] += v;
              }
        });
      });
}

namespace {

struct LerpTap {
  std::int64_t i0, i1;
  double t;
};

std::vector<LerpTap> bilinear_taps(std::int64_t in, std::int64_t out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::int64_t>(std::floor(src));
    i0 = std::min(i0, in - 1);
    const auto i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w) {
  require_rank(x, 3, "upsample_bilinear");
  require(out_h >= 1 && out_w >= 1, "upsample_bilinear: output size");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto ty = std::make_shared<std::vector<LerpTap>>(bilinear_taps(h, out_h));
  auto tx = std::make_shared<std::vector<LerpTap>>(bilinear_taps(w, out_w));
  std::vector<double> out(static_cast<std::size_t>(c * out_h * out_w));
  auto xv = x.data();
  for (std::int64_t ci = 0; ci < c; ++ci) {
    const double* p = xv.data() + ci * h * w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const auto& a = (*ty)[oy];
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const auto& b = (*tx)[ox];
        const double top = (1.0 - b.t) * p[a.i0 * w + b.i0] + b.t * p[a.i0 * w + b.i1];
        const double bot = (1.0 - b.t) * p[a.i1 * w + b.i0] + b.t * p[a.i1 * w + b.i1];
        out[static_cast<std::size_t>((ci * out_h + oy) * out_w + ox)] = (1.0 - a.t) * top + a.t * bot;
      }
    }
  }
  return Tensor::make_result(
      Shape{c, out_h, out_w}, std::move(out), {x}, [x, ty, tx, c, h, w, out_h, out_w](std::span<const double> g) {
        accumulate(x, [&](std::span<double> gx) {
          for (std::int64_t ci = 0; ci < c; ++ci) {
            double* p = gx.data() + ci * h * w;
            for (std::int64_t oy = 0; oy < out_h; ++oy) {
              const auto& a = (*ty)[oy];
              for (std::int64_t ox = 0; ox < out_w; ++ox) {
                const auto& b = (*tx)[ox];
                const double v = g[static_cast<std::size_t>((ci * out_h + oy) * out_w + ox)];
                p[a.i0 * w + b.i0] += v * (1.0 - a.t) * (1.0 - b.t);
                p[a.i0 * w + b.i1] += v * (1.0 - a.t) * b.t;
                p[a.i1 * w + b.i0] += v * a.t * (1.0 - b.t);
                p[a.i1 * w + b.i1] += v * a.t * b.t;
              }
            }
          }
        });
      });
}

Tensor upsample_nearest(const Tensor& x, int out_h, int out_w) {
  require_rank(x, 3, "upsample_nearest");
  require(out_h >= 1 && out_w >= 1, "upsample_nearest: output size");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto src = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(c * out_h * out_w));
  std::vector<double> out(src->size());
  auto xv = x.data();
  std::size_t i = 0;
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t oy = 0; oy < out_h; ++oy)
      for (std::int64_t ox = 0; ox < out_w; ++ox, ++i) {
        const auto iy = std::min(h - 1, oy * h / out_h), ix = std::min(w - 1, ox * w / out_w);
        (*src)[i] = (ci * h + iy) * w + ix;
        out[i] = xv[(*src)[i]];
      }
  return Tensor::make_result(Shape{c, out_h, out_w}, std::move(out), {x}, [x, src](std::span<const double> g) {
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[(*src)[i]] += g[i];
    });
  });
}

Tensor stitch_grid(const std::vector<Tensor>& tiles, int rows, int cols) {
  require(rows >= 1 && cols >= 1 && static_cast<int>(tiles.size()) == rows * cols,
          "stitch_grid: tile count does not match grid");
  const Shape& s = tiles[0].shape();
  require(s.size() == 3, "stitch_grid: tiles must be [C,h,w]");
  for (const auto& t : tiles)
    require(t.shape() == s, "stitch_grid: tile shapes differ");
  const auto c = s[0], h = s[1], w = s[2];
  const std::int64_t H = rows * h, W = cols * w;
  std::vector<double> out(static_cast<std::size_t>(c * H * W));
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    const auto ty = static_cast<std::int64_t>(t) / cols, tx = static_cast<std::int64_t>(t) % cols;
    auto v = tiles[t].data();
    for (std::int64_t ci = 0; ci < c; ++ci)
      for (std::int64_t y = 0; y < h; ++y)
        std::copy_n(v.data() + (ci * h + y) * w, w, out.data() + (ci * H + ty * h + y) * W + tx * w);
  }
  return Tensor::make_result(Shape{c, H, W}, std::move(out), tiles, [tiles, cols, c, h, w, H, W](std::span<const double> g) {
    for (std::size_t t = 0; t < tiles.size(); ++t) {
      const auto ty = static_cast<std::int64_t>(t) / cols, tx = static_cast<std::int64_t>(t) % cols;
      accumulate(tiles[t], [&](std::span<double> gt) {
        for (std::int64_t ci = 0; ci < c; ++ci)
          for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x)
              gt[(ci * h + y) * w + x] += g[(ci * H + ty * h + y) * W + tx * w + x];
      });
    }
  });
}

Tensor mul_plane(const Tensor& x, const std::vector<double>& plane) {
  require_rank(x, 3, "mul_plane");
  const auto c = x.dim(0), n = x.dim(1) * x.dim(2);
  require(static_cast<std::int64_t>(plane.size()) == n, "mul_plane: plane size does not match " + shape_str(x.shape()));
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t i = 0; i < n; ++i) out[ci * n + i] *= plane[i];
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x, plane, c, n](std::span<const double> g) {
    accumulate(x, [&](std::span<double> gx) {
      for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t i = 0; i < n; ++i) gx[ci * n + i] += g[ci * n + i] * plane[i];
    });
  });
}

}  // namespace pcqa::ops
