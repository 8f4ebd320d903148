#include "pcqa/localenc.hpp"

#include <stdexcept>

#include "pcqa/ops.hpp"

namespace pcqa {

LocalWeights LocalWeights::init(const LocalConfig& cfg, std::mt19937_64& rng) {
  if (cfg.in_channels < 1 || cfg.hidden < 1 || cfg.d_out < 1) throw std::invalid_argument("local branch widths");
  LocalWeights w;
  w.config = cfg;
  const std::int64_t ci = cfg.in_channels, hd = cfg.hidden, d = cfg.d_out;
  w.conv3_w = fan_in_uniform_param({hd, ci, 3, 3}, ci * 9, rng);
  w.conv3_b = fan_in_uniform_param({hd}, ci * 9, rng);
  w.conv1_w = fan_in_uniform_param({d, hd, 1, 1}, hd, rng);
  w.conv1_b = fan_in_uniform_param({d}, hd, rng);
  return w;
}

void LocalWeights::collect(ParamList& out) const {
  out.push_back({"local.conv3.weight", conv3_w, false});
  out.push_back({"local.conv3.bias", conv3_b, false});
  out.push_back({"local.conv1.weight", conv1_w, false});
  out.push_back({"local.conv1.bias", conv1_b, false});
}

LocalTrace local_feature(const Tensor& f, const LocalWeights& w) {
  if (f.rank() != 3 || f.dim(0) != w.config.in_channels)
    throw std::invalid_argument("local branch expects [" + std::to_string(w.config.in_channels) + ", H, W], got " +
                                shape_str(f.shape()));
  if (f.dim(1) % 2 != 0 || f.dim(2) % 2 != 0)
    throw std::invalid_argument("local branch needs even spatial size, got " + shape_str(f.shape()));
  LocalTrace t;
  t.conv3 = ops::relu(ops::conv2d(f, w.conv3_w, w.conv3_b, 1, 1));
  t.pooled = ops::max_pool2d(t.conv3, 2, 2);
  t.conv1 = ops::relu(ops::conv2d(t.pooled, w.conv1_w, w.conv1_b, 1, 0));
  t.feature = ops::global_max_pool(t.conv1);
  return t;
}

}  // namespace pcqa
