#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "pcqa/globalenc.hpp"
#include "pcqa/ops.hpp"

using namespace pcqa;

namespace {

EncoderConfig toy(int image = 16, int patch = 4, int dim = 8, int heads = 2) {
  EncoderConfig c;
  c.image_size = image;
  c.patch_size = patch;
  c.embed_dim = dim;
  c.depth = 1;
  c.heads = heads;
  c.d_out = 5;
  return c;
}

Tensor random_tensor(Shape s, std::mt19937_64& rng, bool grad = false) {
  return Tensor(s, oracle::random_vector(static_cast<std::size_t>(shape_numel(s)), rng), grad);
}

}  // namespace

TEST_CASE("token counts for the default patching") {
  EncoderConfig c = toy(224, 16, 8, 2);
  CHECK(c.num_patches() == 196);
  std::mt19937_64 rng(1);
  const auto w = EncoderWeights::init(c, rng);
  const auto z0 = embed_view(Tensor({3, 224, 224}, 0.1), Tensor({1, 224, 224}, 0.5), w);
  CHECK(z0.shape() == Shape{197, 8});
  CHECK(EncoderConfig{}.head_dim() == 64);
}

TEST_CASE("zero patches embed to bias plus position") {
  std::mt19937_64 rng(2);
  auto w = EncoderWeights::init(toy(), rng);
  std::fill(w.embed_d_w.data().begin(), w.embed_d_w.data().end(), 0.0);
  std::fill(w.embed_d_b.data().begin(), w.embed_d_b.data().end(), 0.0);
  const auto tok = patch_embed(Tensor({3, 4, 4}, 0.0), Tensor({1, 4, 4}, 0.0), 5, w);
  for (int i = 0; i < 8; ++i) CHECK(tok.data()[i] == doctest::Approx(w.embed_t_b.data()[i] + w.pos.data()[6 * 8 + i]));
  CHECK_THROWS(patch_embed(Tensor({3, 3, 3}, 0.0), Tensor({1, 4, 4}, 0.0), 0, w));
  CHECK_THROWS(patch_embed(Tensor({3, 4, 4}, 0.0), Tensor({1, 4, 4}, 0.0), 16, w));
}

TEST_CASE("patch_embed agrees with embed_view rows") {
  std::mt19937_64 rng(3);
  const auto w = EncoderWeights::init(toy(), rng);
  const auto tex = random_tensor({3, 16, 16}, rng);
  const auto dep = random_tensor({1, 16, 16}, rng);
  const auto z0 = embed_view(tex, dep, w);
  // Patch index 6 sits at grid row 1, column 2.
  Tensor pt({3, 4, 4}), pd({1, 4, 4});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) pt.data()[(c * 4 + y) * 4 + x] = tex.data()[(c * 16 + 4 + y) * 16 + 8 + x];
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) pd.data()[y * 4 + x] = dep.data()[(4 + y) * 16 + 8 + x];
  const auto tok = patch_embed(pt, pd, 6, w);
  for (int i = 0; i < 8; ++i) CHECK(tok.data()[i] == doctest::Approx(z0.data()[7 * 8 + i]));
}

TEST_CASE("single head attention matches the closed form") {
  std::mt19937_64 rng(4);
  EncoderConfig c = toy(16, 4, 8, 1);
  const auto w = EncoderWeights::init(c, rng);
  const auto x = random_tensor({2, 8}, rng);
  std::vector<Tensor> attn;
  self_attention(x, w.blocks[0], 1, &attn);
  REQUIRE(attn.size() == 1);
  // q = x Wq^T + bq, etc.
  auto proj = [&](int row, int part, int j) {
    double s = w.blocks[0].qkv_b.data()[part * 8 + j];
    for (int i = 0; i < 8; ++i) s += x.data()[row * 8 + i] * w.blocks[0].qkv_w.data()[(part * 8 + j) * 8 + i];
    return s;
  };
  for (int r = 0; r < 2; ++r) {
    double logits[2];
    for (int s = 0; s < 2; ++s) {
      double d = 0;
      for (int j = 0; j < 8; ++j) d += proj(r, 0, j) * proj(s, 1, j);
      logits[s] = d / std::sqrt(8.0);
    }
    const double p0 = 1.0 / (1.0 + std::exp(logits[1] - logits[0]));
    CHECK(attn[0].data()[r * 2] == doctest::Approx(p0).epsilon(1e-12));
    CHECK(attn[0].data()[r * 2 + 1] == doctest::Approx(1.0 - p0).epsilon(1e-12));
  }
}

TEST_CASE("encode returns row-stochastic last-block attention") {
  std::mt19937_64 rng(5);
  EncoderConfig c = toy();
  c.depth = 2;
  const auto w = EncoderWeights::init(c, rng);
  const auto z0 = embed_view(random_tensor({3, 16, 16}, rng), random_tensor({1, 16, 16}, rng), w);
  const auto a = encode(z0, w);
  const auto b = encode(z0, w);
  CHECK(a.tokens.shape() == Shape{17, 8});
  REQUIRE(a.attention.size() == 2);
  for (const auto& m : a.attention) {
    CHECK(m.shape() == Shape{17, 17});
    for (int r = 0; r < 17; ++r) {
      double s = 0;
      for (int col = 0; col < 17; ++col) {
        CHECK(m.data()[r * 17 + col] >= 0.0);
        s += m.data()[r * 17 + col];
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
  CHECK(std::equal(a.tokens.data().begin(), a.tokens.data().end(), b.tokens.data().begin()));

  Tensor bad = z0.detach();
  bad.data()[3] = std::nan("");
  CHECK_THROWS_WITH_AS(encode(bad, w), doctest::Contains("block 0"), std::runtime_error);
}

TEST_CASE("class attention extraction") {
  const int n = 4;
  std::vector<Tensor> uniform{Tensor({n + 1, n + 1}, 1.0 / (n + 1)), Tensor({n + 1, n + 1}, 1.0 / (n + 1))};
  const auto raw = class_attention_raw(uniform, 2, 2);
  CHECK(raw.shape() == Shape{2, 2, 2});
  for (double v : raw.data()) CHECK(v == doctest::Approx(0.2));
  const Tensor g({2}, 1.0), b({2}, 0.0);
  const auto flat = extract_class_attention(uniform, 2, 2, g, b);
  for (double v : flat.data()) CHECK(v == 0.0);

  // Head 1 puts all class mass on patch 3 (grid cell (1,1)).
  Tensor peaked({n + 1, n + 1}, 0.0);
  peaked.data()[4] = 1.0;
  const auto r2 = class_attention_raw({uniform[0], peaked}, 2, 2);
  for (int i = 0; i < 4; ++i) CHECK(r2.data()[4 + i] == (i == 3 ? 1.0 : 0.0));
  // Raw mass over the grid is 1 minus the class self entry.
  CHECK(ops::sum(ops::reshape(ops::slice_rows(ops::reshape(r2, {2, 4}), 0, 1), {4})).item() ==
        doctest::Approx(0.8));
  // Two heads normalize to +-1 per cell (up to eps).
  const auto normed = extract_class_attention({uniform[0], peaked}, 2, 2, g, b);
  const double expect = 0.4 / std::sqrt(0.16 + 1e-5);
  CHECK(normed.data()[3] == doctest::Approx(-expect));
  CHECK(normed.data()[7] == doctest::Approx(expect));
  CHECK_THROWS_AS(class_attention_raw(uniform, 1, 3), std::invalid_argument);
}

TEST_CASE("A_c shape for the default geometry") {
  std::vector<Tensor> heads(12, Tensor({197, 197}, 1.0 / 197));
  const auto a = extract_class_attention(heads, 14, 14, Tensor({12}, 1.0), Tensor({12}, 0.0));
  CHECK(a.shape() == Shape{12, 14, 14});
}

TEST_CASE("occupancy-weighted fusion") {
  const Tensor v({3}, std::vector<double>{1, -2, 0.5});
  const auto same = global_feature({v, v, v, v, v, v}, {0.3, 0.1, 0.7, 0.2, 0.05, 0.9});
  for (int i = 0; i < 3; ++i) CHECK(same.data()[i] == doctest::Approx(v.data()[i]));
  std::vector<Tensor> feats;
  for (int i = 0; i < 6; ++i) feats.push_back(Tensor({1}, std::vector<double>{3.0 * (i + 1)}));
  CHECK(global_feature(feats, {1, 0, 0, 0, 0, 0}).data()[0] == doctest::Approx(3.0));
  CHECK(global_feature(feats, {2, 1, 0, 0, 0, 0}).data()[0] == doctest::Approx(4.0));
  CHECK_THROWS_AS(global_feature(feats, {0, 0, 0, 0, 0, 0}), std::invalid_argument);
}

TEST_CASE("pretrained loading copies names and derives the depth embed") {
  std::mt19937_64 rng(6);
  auto w = EncoderWeights::init(toy(), rng);
  TensorArchive ar;
  ar["patch_embed.proj.weight"] = random_tensor({8, 3, 4, 4}, rng);
  ar["patch_embed.proj.bias"] = random_tensor({8}, rng);
  ar["blocks.0.attn.qkv.weight"] = random_tensor({24, 8}, rng);
  CHECK(load_pretrained(w, ar) == 3);
  CHECK(std::equal(w.blocks[0].qkv_w.data().begin(), w.blocks[0].qkv_w.data().end(),
                   ar["blocks.0.attn.qkv.weight"].data().begin()));
  const auto& src = ar["patch_embed.proj.weight"].data();
  CHECK(w.embed_d_w.data()[16 + 5] == doctest::Approx((src[48 + 5] + src[48 + 16 + 5] + src[48 + 32 + 5]) / 3.0));
  for (double b : w.embed_d_b.data()) CHECK(b == 0.0);
  ar["pos_embed"] = Tensor({3, 8});
  CHECK_THROWS_AS(load_pretrained(w, ar), std::invalid_argument);
}

TEST_CASE("encoder gradient against finite differences") {
  std::mt19937_64 rng(7);
  EncoderConfig c = toy(8, 4, 8, 2);
  const auto w = EncoderWeights::init(c, rng);
  Tensor tex = random_tensor({3, 8, 8}, rng, true);
  const auto dep = random_tensor({1, 8, 8}, rng);
  auto f = [&] {
    const auto r = encode(embed_view(tex, dep, w), w);
    const auto ac = extract_class_attention(r.attention, 2, 2, w.attn_norm_g, w.attn_norm_b);
    return ops::sum(view_feature(ac, w));
  };
  tex.zero_grad();
  f().backward();
  const auto res = oracle::check_grad(tex, [&] {
    NoGradGuard g;
    return f().item();
  }, 1e-3, 1e-8);
  CHECK(res.ok);
}

TEST_CASE("encoder config validation") {
  EncoderConfig c = toy();
  c.patch_size = 5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = toy();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
