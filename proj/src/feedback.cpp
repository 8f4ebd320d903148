#include "pcqa/feedback.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "pcqa/ops.hpp"

namespace pcqa {

Interpolation parse_interpolation(const std::string& s) {
  if (s == "bilinear") return Interpolation::kBilinear;
  if (s == "nearest") return Interpolation::kNearest;
  throw std::invalid_argument("unknown interpolation '" + s + "' (expected bilinear or nearest)");
}

const char* to_string(Interpolation i) { return i == Interpolation::kBilinear ? "bilinear" : "nearest"; }

void FeedbackConfig::validate() const {
  if (regions < 1) throw std::invalid_argument("region count must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw std::invalid_argument("kernel size must be odd and >= 1");
  if (heads < 1 || in_channels < 1 || out_channels < 1) throw std::invalid_argument("feedback channel counts");
  if (!(st_temperature > 0.0)) throw std::invalid_argument("st_temperature must be positive");
}

FeedbackWeights FeedbackWeights::init(const FeedbackConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::int64_t n = cfg.regions, h = cfg.heads;
  FeedbackWeights w;
  w.config = cfg;
  w.mask_w = fan_in_uniform_param({n, h, 3, 3}, h * 9, rng);
  w.mask_b = fan_in_uniform_param({n}, h * 9, rng);
  w.gen1_w = fan_in_uniform_param({n * n, h, 1, 1}, h, rng);
  w.gen1_b = fan_in_uniform_param({n * n}, h, rng);
  w.gen2_w = fan_in_uniform_param({cfg.filter_channels(), n * n, 1, 1}, n * n, rng);
  w.gen2_b = fan_in_uniform_param({cfg.filter_channels()}, n * n, rng);
  return w;
}

void FeedbackWeights::collect(ParamList& out) const {
  out.push_back({"feedback.mask.weight", mask_w, false});
  out.push_back({"feedback.mask.bias", mask_b, false});
  out.push_back({"feedback.filter1.weight", gen1_w, false});
  out.push_back({"feedback.filter1.bias", gen1_b, false});
  out.push_back({"feedback.filter2.weight", gen2_w, false});
  out.push_back({"feedback.filter2.bias", gen2_b, false});
}

std::vector<double> resize_occupancy(const Image& occ, int grid_h, int grid_w) {
  if (occ.channels != 1) throw std::invalid_argument("occupancy must have one channel");
  if (grid_h < 1 || grid_w < 1 || occ.height % grid_h != 0 || occ.width % grid_w != 0)
    throw std::invalid_argument("occupancy " + std::to_string(occ.height) + "x" + std::to_string(occ.width) +
                                " cannot be area-resized to " + std::to_string(grid_h) + "x" + std::to_string(grid_w));
  const int fy = occ.height / grid_h, fx = occ.width / grid_w;
  std::vector<double> out(static_cast<std::size_t>(grid_h) * grid_w, 0.0);
  for (int gy = 0; gy < grid_h; ++gy)
    for (int gx = 0; gx < grid_w; ++gx) {
      double s = 0.0;
      for (int y = 0; y < fy; ++y)
        for (int x = 0; x < fx; ++x) s += occ.at(0, gy * fy + y, gx * fx + x);
      out[static_cast<std::size_t>(gy) * grid_w + gx] = s / (fy * fx);
    }
  return out;
}

Tensor enhance_attention(const Tensor& stitched_attention, const Image& stitched_occupancy) {
  if (stitched_attention.rank() != 3) throw std::invalid_argument("stitched attention must be [N_h, gh, gw]");
  const int gh = static_cast<int>(stitched_attention.dim(1)), gw = static_cast<int>(stitched_attention.dim(2));
  return ops::mul_plane(stitched_attention, resize_occupancy(stitched_occupancy, gh, gw));
}

std::vector<int> argmax_channels(const Tensor& logits) {
  if (logits.rank() != 3) throw std::invalid_argument("argmax_channels expects [n, H, W]");
  const auto n = logits.dim(0), plane = logits.dim(1) * logits.dim(2);
  auto v = logits.data();
  std::vector<int> mask(static_cast<std::size_t>(plane), 0);
  for (std::int64_t i = 0; i < plane; ++i) {
    int best = 0;
    for (std::int64_t t = 1; t < n; ++t)
      if (v[t * plane + i] > v[best * plane + i]) best = static_cast<int>(t);
    mask[static_cast<std::size_t>(i)] = best;
  }
  return mask;
}

MaskPrediction predict_mask(const Tensor& enhanced, const FeedbackWeights& w, int out_h, int out_w) {
  MaskPrediction m;
  m.grid_logits = ops::conv2d(enhanced, w.mask_w, w.mask_b, 1, 1);
  m.logits = w.config.interpolation == Interpolation::kBilinear ? ops::upsample_bilinear(m.grid_logits, out_h, out_w)
                                                               : ops::upsample_nearest(m.grid_logits, out_h, out_w);
  m.mask = argmax_channels(m.logits);
  return m;
}

FilterBank generate_filters(const Tensor& enhanced, const FeedbackWeights& w) {
  const auto& cfg = w.config;
  FilterBank f;
  f.pooled = ops::adaptive_avg_pool(enhanced, cfg.kernel_size, cfg.kernel_size);
  f.hidden = ops::conv2d(f.pooled, w.gen1_w, w.gen1_b, 1, 0);
  f.raw = ops::conv2d(ops::sigmoid(f.hidden), w.gen2_w, w.gen2_b, 1, 0);
  f.filters = ops::reshape(f.raw, {cfg.regions, cfg.out_channels, cfg.in_channels, cfg.kernel_size, cfg.kernel_size});
  return f;
}

Tensor drconv(const Tensor& image, const RegionPlan& plan, double temperature) {
  const Tensor& filters = plan.filters;
  const Tensor& logits = plan.logits;
  if (image.rank() != 3 || filters.rank() != 5)
    throw std::invalid_argument("drconv: image must be [C,H,W] and filters [n,O,C,k,k]");
  const std::int64_t n = filters.dim(0), co = filters.dim(1), ci = filters.dim(2), k = filters.dim(3);
  const std::int64_t h = image.dim(1), w = image.dim(2), plane = h * w, pad = k / 2, taps = ci * k * k;
  if (image.dim(0) != ci) throw std::invalid_argument("drconv: filter input channels do not match image");
  if (filters.dim(4) != k || k % 2 == 0) throw std::invalid_argument("drconv: kernels must be square and odd");
  if (plan.height != h || plan.width != w || static_cast<std::int64_t>(plan.mask.size()) != plane)
    throw std::invalid_argument("drconv: region plan resolution does not match the image");
  if (logits.defined() && logits.shape() != Shape{n, h, w})
    throw std::invalid_argument("drconv: logits shape " + shape_str(logits.shape()));
  if (!(temperature > 0.0)) throw std::invalid_argument("drconv: temperature must be positive");
  for (int m : plan.mask)
    if (m < 0 || m >= n)
      throw std::invalid_argument("drconv: mask value " + std::to_string(m) + " outside [0, " + std::to_string(n) + ")");

  const auto mask = std::make_shared<std::vector<int>>(plan.mask);
  auto x = image.data();
  auto f = filters.data();

  // Gathers the zero-padded k x k neighbourhood of pixel (y, xq), channel-major.
  auto gather = [h, w, ci, k, pad](std::span<const double> img, std::int64_t y, std::int64_t xq, double* patch) {
    for (std::int64_t c = 0; c < ci; ++c)
      for (std::int64_t dy = 0; dy < k; ++dy)
        for (std::int64_t dx = 0; dx < k; ++dx) {
          const auto iy = y + dy - pad, ix = xq + dx - pad;
          *patch++ = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? img[(c * h + iy) * w + ix] : 0.0;
        }
  };

  std::vector<double> out(static_cast<std::size_t>(co * plane));
  std::vector<double> patch(static_cast<std::size_t>(taps));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t xq = 0; xq < w; ++xq) {
      const auto pix = y * w + xq;
      gather(x, y, xq, patch.data());
      const double* wt = f.data() + (*mask)[pix] * co * taps;
      for (std::int64_t o = 0; o < co; ++o) {
        double acc = 0.0;
        for (std::int64_t t = 0; t < taps; ++t) acc += wt[o * taps + t] * patch[t];
        out[o * plane + pix] = acc;
      }
    }

  std::vector<Tensor> inputs{image, filters};
  if (logits.defined()) inputs.push_back(logits);
  return Tensor::make_result(
      Shape{co, h, w}, std::move(out), inputs,
      [image, filters, logits, mask, gather, n, co, ci, h, w, plane, k, pad, taps, temperature](std::span<const double> g) {
        auto x = image.data();
        auto f = filters.data();
        const bool need_f = filters.requires_grad();
        const bool need_x = image.requires_grad();
        const bool need_l = logits.defined() && logits.requires_grad();
        Tensor ft = filters, xt = image, lt = logits;
        std::span<double> gf = need_f ? ft.grad() : std::span<double>{};
        std::span<double> gx = need_x ? xt.grad() : std::span<double>{};
        std::span<double> gl = need_l ? lt.grad() : std::span<double>{};
        auto lv = need_l ? logits.data() : std::span<const double>{};
        std::vector<double> patch(static_cast<std::size_t>(taps)), dpatch(static_cast<std::size_t>(taps));
        std::vector<double> score(static_cast<std::size_t>(n)), prob(static_cast<std::size_t>(n));
        for (std::int64_t y = 0; y < h; ++y)
          for (std::int64_t xq = 0; xq < w; ++xq) {
            const auto pix = y * w + xq;
            gather(x, y, xq, patch.data());
            const auto region = (*mask)[pix];
            const double* wt = f.data() + region * co * taps;
            if (need_f) {
              double* gwt = gf.data() + region * co * taps;
              for (std::int64_t o = 0; o < co; ++o) {
                const double go = g[o * plane + pix];
                if (go == 0.0) continue;
                for (std::int64_t t = 0; t < taps; ++t) gwt[o * taps + t] += go * patch[t];
              }
            }
            if (need_x) {
              std::fill(dpatch.begin(), dpatch.end(), 0.0);
              for (std::int64_t o = 0; o < co; ++o) {
                const double go = g[o * plane + pix];
                for (std::int64_t t = 0; t < taps; ++t) dpatch[t] += go * wt[o * taps + t];
              }
              std::int64_t t = 0;
              for (std::int64_t c = 0; c < ci; ++c)
                for (std::int64_t dy = 0; dy < k; ++dy)
                  for (std::int64_t dx = 0; dx < k; ++dx, ++t) {
                    const auto iy = y + dy - pad, ix = xq + dx - pad;
                    if (iy >= 0 && iy < h && ix >= 0 && ix < w) gx[(c * h + iy) * w + ix] += dpatch[t];
                  }
            }
            if (need_l) {
              // score_r = <dL/dF, S (*) W_r> at this pixel; backward treats the
              // one-hot selection as softmax(logits / T).
              double mx = -std::numeric_limits<double>::infinity();
              for (std::int64_t r = 0; r < n; ++r) mx = std::max(mx, lv[r * plane + pix] / temperature);
              double z = 0.0;
              for (std::int64_t r = 0; r < n; ++r) z += (prob[r] = std::exp(lv[r * plane + pix] / temperature - mx));
              double expected = 0.0;
              for (std::int64_t r = 0; r < n; ++r) {
                prob[r] /= z;
                const double* wr = f.data() + r * co * taps;
                double s = 0.0;
                for (std::int64_t o = 0; o < co; ++o) {
                  double acc = 0.0;
                  for (std::int64_t t = 0; t < taps; ++t) acc += wr[o * taps + t] * patch[t];
                  s += g[o * plane + pix] * acc;
                }
                score[r] = s;
                expected += prob[r] * s;
              }
              for (std::int64_t r = 0; r < n; ++r)
                gl[r * plane + pix] += prob[r] * (score[r] - expected) / temperature;
            }
          }
      });
}

}  // namespace pcqa
