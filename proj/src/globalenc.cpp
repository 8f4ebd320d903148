#include "pcqa/globalenc.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "pcqa/ops.hpp"

namespace pcqa {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLayerNormEps = 1e-6;

void check_finite(const Tensor& t, int block, const char* where) {
  for (double v : t.data())
    if (!std::isfinite(v))
      throw std::runtime_error("non-finite activation in encoder block " + std::to_string(block) + " (" + where + ")");
}

void copy_into(Tensor& dst, const Tensor& src, const std::string& name) {
  if (src.numel() != dst.numel())
    throw std::invalid_argument("pretrained tensor " + name + " has shape " + shape_str(src.shape()) +
                                ", expected " + std::to_string(dst.numel()) + " values");
  std::copy(src.data().begin(), src.data().end(), dst.data().begin());
}

}  // namespace

void EncoderConfig::validate() const {
  if (patch_size < 1 || image_size % patch_size != 0)
    throw std::invalid_argument("patch size " + std::to_string(patch_size) + " must divide image size " +
                                std::to_string(image_size));
  if (heads < 1 || embed_dim % heads != 0)
    throw std::invalid_argument("embed_dim " + std::to_string(embed_dim) + " not divisible by heads " +
                                std::to_string(heads));
  if (depth < 1 || d_out < 1 || mlp_ratio < 1) throw std::invalid_argument("encoder sizes must be positive");
}

EncoderWeights EncoderWeights::init(const EncoderConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::int64_t d = cfg.embed_dim, p2 = cfg.patch_size * cfg.patch_size, hidden = d * cfg.mlp_ratio;
  EncoderWeights w;
  w.config = cfg;
  w.embed_t_w = trunc_normal_param({d, 3 * p2}, kInitStd, rng);
  w.embed_t_b = make_param({d}, 0.0);
  w.embed_d_w = trunc_normal_param({d, p2}, kInitStd, rng);
  w.embed_d_b = make_param({d}, 0.0);
  w.cls = trunc_normal_param({1, d}, kInitStd, rng);
  w.pos = trunc_normal_param({cfg.num_patches() + 1, d}, kInitStd, rng);
  for (int l = 0; l < cfg.depth; ++l) {
    EncoderBlock b;
    b.ln1_g = make_param({d}, 1.0);
    b.ln1_b = make_param({d}, 0.0);
    b.qkv_w = trunc_normal_param({3 * d, d}, kInitStd, rng);
    b.qkv_b = make_param({3 * d}, 0.0);
    b.proj_w = trunc_normal_param({d, d}, kInitStd, rng);
    b.proj_b = make_param({d}, 0.0);
    b.ln2_g = make_param({d}, 1.0);
    b.ln2_b = make_param({d}, 0.0);
    b.fc1_w = trunc_normal_param({hidden, d}, kInitStd, rng);
    b.fc1_b = make_param({hidden}, 0.0);
    b.fc2_w = trunc_normal_param({d, hidden}, kInitStd, rng);
    b.fc2_b = make_param({d}, 0.0);
    w.blocks.push_back(std::move(b));
  }
  w.attn_norm_g = make_param({cfg.heads}, 1.0);
  w.attn_norm_b = make_param({cfg.heads}, 0.0);
  if (!cfg.attn_norm_affine) {
    w.attn_norm_g.set_requires_grad(false);
    w.attn_norm_b.set_requires_grad(false);
  }
  w.proj_w = fan_in_uniform_param({cfg.d_out, cfg.heads, 1, 1}, cfg.heads, rng);
  w.proj_b = fan_in_uniform_param({cfg.d_out}, cfg.heads, rng);
  return w;
}

void EncoderWeights::collect(ParamList& out) const {
  out.push_back({"encoder.embed_t.weight", embed_t_w, true});
  out.push_back({"encoder.embed_t.bias", embed_t_b, true});
  out.push_back({"encoder.embed_d.weight", embed_d_w, true});
  out.push_back({"encoder.embed_d.bias", embed_d_b, true});
  out.push_back({"encoder.cls_token", cls, true});
  out.push_back({"encoder.pos_embed", pos, true});
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& b = blocks[l];
    const std::string p = "encoder.blocks." + std::to_string(l) + ".";
    out.push_back({p + "norm1.weight", b.ln1_g, true});
    out.push_back({p + "norm1.bias", b.ln1_b, true});
    out.push_back({p + "attn.qkv.weight", b.qkv_w, true});
    out.push_back({p + "attn.qkv.bias", b.qkv_b, true});
    out.push_back({p + "attn.proj.weight", b.proj_w, true});
    out.push_back({p + "attn.proj.bias", b.proj_b, true});
    out.push_back({p + "norm2.weight", b.ln2_g, true});
    out.push_back({p + "norm2.bias", b.ln2_b, true});
    out.push_back({p + "mlp.fc1.weight", b.fc1_w, true});
    out.push_back({p + "mlp.fc1.bias", b.fc1_b, true});
    out.push_back({p + "mlp.fc2.weight", b.fc2_w, true});
    out.push_back({p + "mlp.fc2.bias", b.fc2_b, true});
  }
  if (config.attn_norm_affine) {
    out.push_back({"global.attn_norm.weight", attn_norm_g, false});
    out.push_back({"global.attn_norm.bias", attn_norm_b, false});
  }
  out.push_back({"global.proj.weight", proj_w, false});
  out.push_back({"global.proj.bias", proj_b, false});
}

int load_pretrained(EncoderWeights& w, const TensorArchive& archive) {
  int loaded = 0;
  auto take = [&](const std::string& name, Tensor& dst) {
    auto it = archive.find(name);
    if (it == archive.end()) return false;
    copy_into(dst, it->second, name);
    ++loaded;
    return true;
  };
  if (auto it = archive.find("patch_embed.proj.weight"); it != archive.end()) {
    copy_into(w.embed_t_w, it->second, it->first);
    ++loaded;
    // Depth embedding: mean over the three input channels of the RGB kernel.
    const std::int64_t d = w.embed_t_w.dim(0), p2 = w.embed_d_w.dim(1);
    auto src = w.embed_t_w.data();
    auto dst = w.embed_d_w.data();
    for (std::int64_t o = 0; o < d; ++o)
      for (std::int64_t i = 0; i < p2; ++i)
        dst[o * p2 + i] = (src[o * 3 * p2 + i] + src[o * 3 * p2 + p2 + i] + src[o * 3 * p2 + 2 * p2 + i]) / 3.0;
  }
  if (take("patch_embed.proj.bias", w.embed_t_b)) std::fill(w.embed_d_b.data().begin(), w.embed_d_b.data().end(), 0.0);
  take("cls_token", w.cls);
  take("pos_embed", w.pos);
  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    auto& b = w.blocks[l];
    const std::string p = "blocks." + std::to_string(l) + ".";
    take(p + "norm1.weight", b.ln1_g);
    take(p + "norm1.bias", b.ln1_b);
    take(p + "attn.qkv.weight", b.qkv_w);
    take(p + "attn.qkv.bias", b.qkv_b);
    take(p + "attn.proj.weight", b.proj_w);
    take(p + "attn.proj.bias", b.proj_b);
    take(p + "norm2.weight", b.ln2_g);
    take(p + "norm2.bias", b.ln2_b);
    take(p + "mlp.fc1.weight", b.fc1_w);
    take(p + "mlp.fc1.bias", b.fc1_b);
    take(p + "mlp.fc2.weight", b.fc2_w);
    take(p + "mlp.fc2.bias", b.fc2_b);
  }
  return loaded;
}

Tensor patch_embed(const Tensor& texture_patch, const Tensor& depth_patch, std::int64_t index,
                   const EncoderWeights& w) {
  const std::int64_t p = w.config.patch_size;
  if (texture_patch.shape() != Shape{3, p, p} || depth_patch.shape() != Shape{1, p, p})
    throw std::invalid_argument("patch_embed: expected [3,P,P] and [1,P,P] patches, got " +
                                shape_str(texture_patch.shape()) + " and " + shape_str(depth_patch.shape()));
  if (index < 0 || index >= w.config.num_patches()) throw std::out_of_range("patch index");
  const auto t = ops::linear(ops::reshape(texture_patch, {1, 3 * p * p}), w.embed_t_w, w.embed_t_b);
  const auto d = ops::linear(ops::reshape(depth_patch, {1, p * p}), w.embed_d_w, w.embed_d_b);
  const auto pe = ops::slice_rows(w.pos, index + 1, 1);
  return ops::reshape(ops::add(ops::add(t, d), pe), {w.config.embed_dim});
}

Tensor embed_view(const Tensor& texture, const Tensor& depth, const EncoderWeights& w) {
  const auto& cfg = w.config;
  if (texture.rank() != 3 || texture.dim(0) != 3 || depth.rank() != 3 || depth.dim(0) != 1 ||
      texture.dim(1) != depth.dim(1) || texture.dim(2) != depth.dim(2))
    throw std::invalid_argument("embed_view: texture/depth shapes " + shape_str(texture.shape()) + " / " +
                                shape_str(depth.shape()));
  if (texture.dim(1) != cfg.image_size || texture.dim(2) != cfg.image_size)
    throw std::invalid_argument("embed_view: encoder expects " + std::to_string(cfg.image_size) + "x" +
                                std::to_string(cfg.image_size) + " views, got " + shape_str(texture.shape()));
  const auto t = ops::linear(ops::patchify(texture, cfg.patch_size), w.embed_t_w, w.embed_t_b);
  const auto d = ops::linear(ops::patchify(depth, cfg.patch_size), w.embed_d_w, w.embed_d_b);
  const auto tokens = ops::concat({w.cls, ops::add(t, d)});
  return ops::add(tokens, w.pos);
}

Tensor self_attention(const Tensor& normed, const EncoderBlock& b, int heads, std::vector<Tensor>* attention) {
  const std::int64_t d = normed.dim(1), dh = d / heads;
  const auto qkv = ops::linear(normed, b.qkv_w, b.qkv_b);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  if (attention) attention->clear();
  for (int j = 0; j < heads; ++j) {
    const auto q = ops::slice_cols(qkv, j * dh, dh);
    const auto k = ops::slice_cols(qkv, d + j * dh, dh);
    const auto v = ops::slice_cols(qkv, 2 * d + j * dh, dh);
    const auto a = ops::softmax_rows(ops::scale(ops::matmul(q, ops::transpose(k)), inv_sqrt));
    outs.push_back(ops::matmul(a, v));
    if (attention) attention->push_back(a);
  }
  return ops::linear(ops::concat_cols(outs), b.proj_w, b.proj_b);
}

EncodeResult encode(const Tensor& z0, const EncoderWeights& w) {
  const auto& cfg = w.config;
  if (z0.rank() != 2 || z0.dim(1) != cfg.embed_dim)
    throw std::invalid_argument("encode: token sequence " + shape_str(z0.shape()));
  EncodeResult r;
  Tensor z = z0;
  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    const auto& b = w.blocks[l];
    const bool last = l + 1 == w.blocks.size();
    const auto n1 = ops::layer_norm_rows(z, b.ln1_g, b.ln1_b, kLayerNormEps);
    z = ops::add(z, self_attention(n1, b, cfg.heads, last ? &r.attention : nullptr));
    check_finite(z, static_cast<int>(l), "attention");
    const auto n2 = ops::layer_norm_rows(z, b.ln2_g, b.ln2_b, kLayerNormEps);
    z = ops::add(z, ops::linear(ops::gelu(ops::linear(n2, b.fc1_w, b.fc1_b)), b.fc2_w, b.fc2_b));
    check_finite(z, static_cast<int>(l), "mlp");
  }
  r.tokens = z;
  return r;
}

Tensor class_attention_raw(const std::vector<Tensor>& attention, int grid_h, int grid_w) {
  if (attention.empty()) throw std::invalid_argument("class attention: no heads");
  const std::int64_t n = static_cast<std::int64_t>(grid_h) * grid_w;
  std::vector<Tensor> rows;
  rows.reserve(attention.size());
  for (const auto& a : attention) {
    if (a.rank() != 2 || a.dim(0) != a.dim(1) || a.dim(0) != n + 1)
      throw std::invalid_argument("class attention: " + std::to_string(a.dim(0) - 1) + " patch tokens do not form a " +
                                  std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
    rows.push_back(ops::slice_cols(ops::slice_rows(a, 0, 1), 1, n));
  }
  return ops::reshape(ops::concat(rows), {static_cast<std::int64_t>(attention.size()), grid_h, grid_w});
}

Tensor extract_class_attention(const std::vector<Tensor>& attention, int grid_h, int grid_w, const Tensor& gamma,
                               const Tensor& beta) {
  const auto raw = class_attention_raw(attention, grid_h, grid_w);
  const std::int64_t heads = raw.dim(0), n = static_cast<std::int64_t>(grid_h) * grid_w;
  const auto per_cell = ops::transpose(ops::reshape(raw, {heads, n}));
  const auto normed = ops::layer_norm_rows(per_cell, gamma, beta, kAttentionNormEps);
  return ops::reshape(ops::transpose(normed), {heads, grid_h, grid_w});
}

Tensor view_feature(const Tensor& class_attention, const EncoderWeights& w) {
  return ops::global_avg_pool(ops::conv2d(class_attention, w.proj_w, w.proj_b, 1, 0));
}

Tensor global_feature(const std::vector<Tensor>& view_features, const std::vector<double>& ratios) {
  if (view_features.size() != ratios.size() || view_features.empty())
    throw std::invalid_argument("global_feature: need one ratio per view");
  double total = 0.0;
  for (double r : ratios) total += r;
  if (!(total > 0.0)) throw std::invalid_argument("global_feature: every view is empty (all occupancy ratios are 0)");
  return ops::weighted_mean(view_features, ratios);
}

}  // namespace pcqa
