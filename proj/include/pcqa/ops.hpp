#pragma once

#include <vector>

#include "pcqa/tensor.hpp"

// Differentiable tensor operations. Image tensors are channel-major [C, H, W];
// matrices are [rows, cols].
namespace pcqa::ops {

// Elementwise, shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
// a * s and a / s for a scalar tensor s.
Tensor mul_scalar(const Tensor& a, const Tensor& s);
Tensor div_scalar(const Tensor& a, const Tensor& s);

Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor sqrt(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& a, Shape shape);
// Concatenate along axis 0; trailing dimensions must agree.
Tensor concat(const std::vector<Tensor>& parts);
// Scalars -> vector.
Tensor stack_scalars(const std::vector<Tensor>& scalars);
Tensor index(const Tensor& vec, std::int64_t i);
// sum_i w_i x_i / sum_i w_i with constant weights.
Tensor weighted_mean(const std::vector<Tensor>& xs, const std::vector<double>& weights);

// Matrices.
Tensor matmul(const Tensor& a, const Tensor& b);
// x [m, in], w [out, in], bias [out] (may be undefined) -> [m, out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor transpose(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor slice_rows(const Tensor& a, std::int64_t start, std::int64_t count);
Tensor slice_cols(const Tensor& a, std::int64_t start, std::int64_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Images.
// x [C,H,W], w [O,C,kh,kw], bias [O] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
// [C,H,W] -> [(H/P)(W/P), C*P*P], patches in row-major grid order, each patch
// flattened channel-major.
Tensor patchify(const Tensor& x, int patch);
Tensor max_pool2d(const Tensor& x, int window, int stride);
Tensor global_max_pool(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);
// Adaptive average pooling with floor/ceil bin edges.
Tensor adaptive_avg_pool(const Tensor& x, int out_h, int out_w);
// Bilinear resize with half-pixel centers (align_corners = false).
Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w);
// Nearest-neighbour resize (source index floor(dst * in / out)).
Tensor upsample_nearest(const Tensor& x, int out_h, int out_w);
// rows*cols tiles of [C,h,w] -> [C, rows*h, cols*w]; tile t goes to
// (t / cols, t % cols).
Tensor stitch_grid(const std::vector<Tensor>& tiles, int rows, int cols);
// x [C,H,W] times a constant [H,W] plane on every channel.
Tensor mul_plane(const Tensor& x, const std::vector<double>& plane);

}  // namespace pcqa::ops
