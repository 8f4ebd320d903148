#include "pcqa/model.hpp"

#include <random>
#include <stdexcept>

#include "pcqa/ops.hpp"

namespace pcqa {

QualityNet QualityNet::init(ModelConfig cfg, std::uint64_t seed) {
  cfg.sync();
  std::mt19937_64 rng(seed);
  QualityNet net;
  net.config = cfg;
  net.encoder = EncoderWeights::init(cfg.encoder, rng);
  net.feedback = FeedbackWeights::init(cfg.feedback, rng);
  net.local = LocalWeights::init(cfg.local, rng);
  net.heads = HeadWeights::init(cfg.encoder.d_out, rng);
  return net;
}

ParamList QualityNet::params() const {
  ParamList out;
  encoder.collect(out);
  feedback.collect(out);
  local.collect(out);
  heads.collect(out);
  return out;
}

QualityNet QualityNet::clone() const {
  QualityNet copy = init(config, 0);
  load_params(copy.params(), to_archive(params()));
  return copy;
}

Tensor image_tensor(const Image& im) {
  return Tensor(Shape{im.channels, im.height, im.width}, im.data);
}

ForwardTrace forward(const QualityNet& net, const ViewSet& views) {
  check_view_set(views);
  const auto& ec = net.config.encoder;
  if (views.height() != ec.image_size || views.width() != ec.image_size)
    throw std::invalid_argument("model expects " + std::to_string(ec.image_size) + "x" + std::to_string(ec.image_size) +
                                " views, got " + std::to_string(views.height()) + "x" + std::to_string(views.width()));
  const int g = ec.grid();
  ForwardTrace t;
  for (int v = 0; v < kNumViews; ++v) {
    const auto z0 = embed_view(image_tensor(views.texture[v]), image_tensor(views.depth[v]), net.encoder);
    const auto enc = encode(z0, net.encoder);
    t.class_attention.push_back(
        extract_class_attention(enc.attention, g, g, net.encoder.attn_norm_g, net.encoder.attn_norm_b));
    t.view_features.push_back(view_feature(t.class_attention.back(), net.encoder));
  }
  t.global = global_feature(t.view_features, std::vector<double>(views.ratios.begin(), views.ratios.end()));

  const StitchedInput s = stitch(views);
  t.stitched_attention = ops::stitch_grid(t.class_attention, 2, 3);
  t.enhanced = enhance_attention(t.stitched_attention, s.occupancy);
  t.mask = predict_mask(t.enhanced, net.feedback, s.image.height, s.image.width);
  t.filters = generate_filters(t.enhanced, net.feedback);

  RegionPlan plan;
  plan.regions = net.config.feedback.regions;
  plan.kernel = net.config.feedback.kernel_size;
  plan.height = s.image.height;
  plan.width = s.image.width;
  plan.mask = t.mask.mask;
  plan.logits = t.mask.logits;
  plan.filters = t.filters.filters;
  t.region_features = drconv(image_tensor(s.image), plan, net.config.feedback.st_temperature);
  t.local = local_feature(t.region_features, net.local);
  t.prediction = predict_heads(t.global, t.local.feature, net.heads);
  return t;
}

double predict_fine(const QualityNet& net, const ViewSet& views) {
  NoGradGuard guard;
  return forward(net, views).prediction.fine.item();
}

TensorArchive to_archive(const ParamList& params) {
  TensorArchive a;
  for (const auto& p : params) a[p.name] = p.tensor.detach().clone();
  return a;
}

void load_params(const ParamList& params, const TensorArchive& archive) {
  for (const auto& p : params) {
    auto it = archive.find(p.name);
    if (it == archive.end()) throw std::runtime_error("parameter " + p.name + " missing from archive");
    if (it->second.shape() != p.tensor.shape())
      throw std::runtime_error("parameter " + p.name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                               shape_str(p.tensor.shape()));
    Tensor dst = p.tensor;
    std::copy(it->second.data().begin(), it->second.data().end(), dst.data().begin());
  }
}

}  // namespace pcqa
