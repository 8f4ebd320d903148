#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "pcqa/ops.hpp"

using namespace pcqa;

namespace {

// Gradient of sum(probe * f(x)) against central differences.
bool grad_ok(Tensor x, const std::function<Tensor()>& f, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  const Tensor y0 = f();
  const Tensor probe(y0.shape(), oracle::random_vector(static_cast<std::size_t>(y0.numel()), rng));
  x.zero_grad();
  ops::dot(f(), probe).backward();
  return oracle::check_grad(x, [&] {
           NoGradGuard g;
           return ops::dot(f(), probe).item();
         }, 1e-5, 1e-8).ok;
}

Tensor rand_param(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  return Tensor(s, oracle::random_vector(static_cast<std::size_t>(shape_numel(s)), rng, lo, hi), true);
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.dim(-1) == 3);
  CHECK(shape_str(t.shape()) == "[2x3]");
  CHECK_THROWS(t.dim(2));
  CHECK_THROWS(Tensor({2}, std::vector<double>{1, 2, 3}));
  CHECK_THROWS(t.backward());
  CHECK(Tensor::scalar(4).item() == 4);
}

TEST_CASE("no-grad guard skips graph recording") {
  Tensor a({3}, 2.0, true);
  {
    NoGradGuard g;
    CHECK_FALSE(ops::scale(a, 2).requires_grad());
  }
  CHECK(ops::scale(a, 2).requires_grad());
}

TEST_CASE("gradient accumulates through shared inputs") {
  Tensor a({1}, std::vector<double>{3.0}, true);
  ops::sum(ops::mul(a, a)).backward();
  CHECK(a.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("elementwise gradients") {
  Tensor a = rand_param({5}, 1), b = rand_param({5}, 2);
  CHECK(grad_ok(a, [&] { return ops::mul(a, b); }));
  CHECK(grad_ok(a, [&] { return ops::gelu(a); }));
  CHECK(grad_ok(a, [&] { return ops::sigmoid(a); }));
  Tensor p = rand_param({5}, 3, 0.5, 2);
  CHECK(grad_ok(p, [&] { return ops::sqrt(p); }));
  Tensor s({}, std::vector<double>{1.7}, true);
  CHECK(grad_ok(s, [&] { return ops::div_scalar(a, s); }));
}

TEST_CASE("matrix gradients") {
  Tensor x = rand_param({4, 6}, 4), w = rand_param({3, 6}, 5), b = rand_param({3}, 6);
  CHECK(grad_ok(x, [&] { return ops::linear(x, w, b); }));
  CHECK(grad_ok(w, [&] { return ops::linear(x, w, b); }));
  CHECK(grad_ok(b, [&] { return ops::linear(x, w, b); }));
  CHECK(grad_ok(x, [&] { return ops::softmax_rows(x); }));
  Tensor g = rand_param({6}, 7), be = rand_param({6}, 8);
  CHECK(grad_ok(x, [&] { return ops::layer_norm_rows(x, g, be, 1e-6); }));
  CHECK(grad_ok(g, [&] { return ops::layer_norm_rows(x, g, be, 1e-6); }));
  CHECK(grad_ok(x, [&] { return ops::concat_cols({ops::slice_cols(x, 1, 2), ops::slice_rows(ops::transpose(x), 0, 4)}); }));
}

TEST_CASE("softmax rows sum to one") {
  std::mt19937_64 rng(9);
  const Tensor s = ops::softmax_rows(Tensor({3, 5}, oracle::random_vector(15, rng, -50, 50)));
  for (int r = 0; r < 3; ++r) {
    double sum = 0;
    for (int c = 0; c < 5; ++c) sum += s.at(r * 5 + c);
    CHECK(sum == doctest::Approx(1.0));
  }
}

TEST_CASE("conv2d matches direct convolution") {
  std::mt19937_64 rng(10);
  const auto x = oracle::random_vector(3 * 7 * 5, rng);
  const auto w = oracle::random_vector(4 * 3 * 3 * 3, rng);
  const Tensor out = ops::conv2d(Tensor({3, 7, 5}, x), Tensor({4, 3, 3, 3}, w), Tensor(), 1, 1);
  const auto ref = oracle::conv_same(x, 3, 7, 5, w.data(), 4, 3);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(out.at(static_cast<std::int64_t>(i)) == doctest::Approx(ref[i]));
}

TEST_CASE("conv2d and pooling gradients") {
  Tensor x = rand_param({2, 6, 6}, 11), w = rand_param({3, 2, 3, 3}, 12), b = rand_param({3}, 13);
  CHECK(grad_ok(x, [&] { return ops::conv2d(x, w, b, 1, 1); }));
  CHECK(grad_ok(w, [&] { return ops::conv2d(x, w, b, 2, 1); }));
  CHECK(grad_ok(x, [&] { return ops::max_pool2d(x, 2, 2); }));
  CHECK(grad_ok(x, [&] { return ops::global_max_pool(x); }));
  CHECK(grad_ok(x, [&] { return ops::adaptive_avg_pool(x, 4, 3); }));
  CHECK(grad_ok(x, [&] { return ops::upsample_bilinear(x, 11, 13); }));
  CHECK(grad_ok(x, [&] { return ops::upsample_nearest(x, 12, 9); }));
  CHECK(grad_ok(x, [&] { return ops::patchify(x, 3); }));
}

TEST_CASE("bilinear upsample keeps constants and uses half-pixel centers") {
  const Tensor c = ops::upsample_bilinear(Tensor({1, 2, 2}, 3.0), 6, 6);
  for (double v : c.data()) CHECK(v == doctest::Approx(3.0));
  // 1x2 -> 1x4: outputs at source coords -0.25, 0.25, 0.75, 1.25 (clamped).
  const Tensor r = ops::upsample_bilinear(Tensor({1, 1, 2}, std::vector<double>{0, 1}), 1, 4);
  CHECK(r.at(0) == doctest::Approx(0.0));
  CHECK(r.at(1) == doctest::Approx(0.25));
  CHECK(r.at(2) == doctest::Approx(0.75));
  CHECK(r.at(3) == doctest::Approx(1.0));
}

TEST_CASE("stitch_grid places tiles row-major") {
  std::vector<Tensor> tiles;
  for (int t = 0; t < 6; ++t) tiles.push_back(Tensor({1, 2, 2}, static_cast<double>(t)));
  const Tensor s = ops::stitch_grid(tiles, 2, 3);
  CHECK(s.shape() == Shape{1, 4, 6});
  CHECK(s.at(0 * 6 + 5) == 2.0);
  CHECK(s.at(3 * 6 + 0) == 3.0);
  CHECK(s.at(3 * 6 + 5) == 5.0);
}

TEST_CASE("shape errors are reported") {
  CHECK_THROWS_AS(ops::add(Tensor({2}), Tensor({3})), std::invalid_argument);
  CHECK_THROWS_AS(ops::matmul(Tensor({2, 3}), Tensor({2, 3})), std::invalid_argument);
  CHECK_THROWS_AS(ops::reshape(Tensor({2, 3}), {5}), std::invalid_argument);
  CHECK_THROWS_AS(ops::conv2d(Tensor({2, 4, 4}), Tensor({1, 3, 3, 3}), Tensor(), 1, 1), std::invalid_argument);
}
