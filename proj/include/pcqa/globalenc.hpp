#pragma once

#include <random>
#include <vector>

#include "pcqa/params.hpp"
#include "pcqa/tensor.hpp"

namespace pcqa {

struct EncoderConfig {
  int image_size = 224;  // side of the (cropped) view fed to the encoder
  int patch_size = 16;
  int embed_dim = 768;
  int depth = 12;
  int heads = 12;
  int mlp_ratio = 4;
  int d_out = 256;
  bool attn_norm_affine = true;

  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int head_dim() const { return embed_dim / heads; }
  void validate() const;
};

struct EncoderBlock {
  Tensor ln1_g, ln1_b;
  Tensor qkv_w, qkv_b;    // [3D, D]; q, k, v each split into heads along columns
  Tensor proj_w, proj_b;  // [D, D]
  Tensor ln2_g, ln2_b;
  Tensor fc1_w, fc1_b;  // [mlp*D, D]
  Tensor fc2_w, fc2_b;  // [D, mlp*D]
};

/// Transformer weights plus the head that turns class-attention maps into a
/// per-view global vector.
struct EncoderWeights {
  EncoderConfig config;
  Tensor embed_t_w, embed_t_b;  // [D, 3*P*P], texture patch embedding
  Tensor embed_d_w, embed_d_b;  // [D, P*P], depth patch embedding
  Tensor cls;                   // [1, D]
  Tensor pos;                   // [N+1, D]
  std::vector<EncoderBlock> blocks;
  Tensor attn_norm_g, attn_norm_b;  // [N_h], layer norm across heads
  Tensor proj_w, proj_b;            // [D_o, N_h, 1, 1], 1x1 conv on maps

  static EncoderWeights init(const EncoderConfig& cfg, std::mt19937_64& rng);
  void collect(ParamList& out) const;
};

/// Copies ViT weights (timm names: patch_embed.proj.weight, pos_embed,
/// cls_token, blocks.{i}.{norm1,attn.qkv,attn.proj,norm2,mlp.fc1,mlp.fc2}.*)
/// into the encoder. The depth embedding becomes the channel mean of the RGB
/// embedding. Returns the number of tensors loaded.
int load_pretrained(EncoderWeights& w, const TensorArchive& archive);

/// Token embedding of one patch pair at grid position `index` (0-based,
/// excluding the class slot): PatchEmbed_t(p_t) + PatchEmbed_d(p_d) + PE.
/// p_t is [3,P,P], p_d is [1,P,P]; returns [D].
Tensor patch_embed(const Tensor& texture_patch, const Tensor& depth_patch, std::int64_t index,
                   const EncoderWeights& w);

/// Whole-view version: texture [3,H,W], depth [1,H,W] -> z_0 [N+1, D] with the
/// class token in row 0.
Tensor embed_view(const Tensor& texture, const Tensor& depth, const EncoderWeights& w);

struct EncodeResult {
  Tensor tokens;                   // z_L [N+1, D]
  std::vector<Tensor> attention;   // last block, per head [N+1, N+1]
};

/// Pre-norm transformer blocks. Throws with the block index when an
/// activation becomes non-finite.
EncodeResult encode(const Tensor& z0, const EncoderWeights& w);

/// Multi-head self-attention of one block on already-normalized tokens;
/// returns the projected output and fills per-head softmax matrices.
Tensor self_attention(const Tensor& normed, const EncoderBlock& block, int heads, std::vector<Tensor>* attention);

/// Class-token rows without the self entry, as [N_h, gh, gw], before the
/// cross-head layer norm.
Tensor class_attention_raw(const std::vector<Tensor>& attention, int grid_h, int grid_w);

/// A_c: class_attention_raw followed by a layer norm across heads at each
/// grid cell (eps 1e-5).
Tensor extract_class_attention(const std::vector<Tensor>& attention, int grid_h, int grid_w, const Tensor& gamma,
                               const Tensor& beta);

/// 1x1 conv (N_h -> D_o) then spatial average: f_g^i.
Tensor view_feature(const Tensor& class_attention, const EncoderWeights& w);

/// Occupancy-weighted fusion of per-view features. Throws when every ratio
/// is zero.
Tensor global_feature(const std::vector<Tensor>& view_features, const std::vector<double>& ratios);

inline constexpr double kAttentionNormEps = 1e-5;

}  // namespace pcqa
