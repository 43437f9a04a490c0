#pragma once

// Differentiable operations over Tape-recorded values, plus plain-Tensor
// forward versions of the core ops.

#include <cstddef>
#include <vector>

#include "vipt/tape.hpp"
#include "vipt/tensor.hpp"

namespace vipt {

constexpr double kLayerNormEps = 1e-6;

// ---- plain forward ---------------------------------------------------------

// x [N, C_in], weight [C_in, C_out], bias [C_out] -> [N, C_out]
Tensor linear_per_token(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kLayerNormEps);
Tensor gelu(const Tensor& x);

namespace ops {

// ---- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
// out = a * x + b elementwise, with constant per-element `a` and `b`.
Var affine(const Var& x, std::vector<double> a, std::vector<double> b);
Var gelu(const Var& x);
Var sigmoid(const Var& x);

// ---- reductions ------------------------------------------------------------

Var sum(const Var& x);
Var mean(const Var& x);

// ---- layout ----------------------------------------------------------------

Var reshape(const Var& x, Shape shape);
Var transpose(const Var& x);  // rank 2
Var slice_rows(const Var& x, std::size_t begin, std::size_t end);
Var concat_rows(const Var& a, const Var& b);
// Gather of flat element indices into a rank-1 result.
Var pick(const Var& x, std::vector<std::size_t> indices);
// image [C, H, W] -> [(H/p)(W/p), C*p*p]; patch rows in raster order, each
// row laid out channel-major (c, dy, dx).
Var patchify(const Var& image, std::size_t patch);

// ---- layers ----------------------------------------------------------------

// x [N, C_in], weight [C_in, C_out], bias [C_out] (bias may be an invalid Var).
Var linear(const Var& x, const Var& weight, const Var& bias);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = kLayerNormEps);
Var softmax(const Var& x, std::size_t axis);
// qkv [N, 3D] -> [N, D]: scaled dot-product attention per head.
Var attention(const Var& qkv, std::size_t heads);
// x [C_in, H, W], weight [C_out, C_in, 3, 3], bias [C_out] -> [C_out, H, W].
Var conv3x3(const Var& x, const Var& weight, const Var& bias);
// m [n, d] token-major, lambda [1]; per channel m * lambda * softmax_n(m).
Var fovea(const Var& m, const Var& lambda);

// -log softmax(logits)[target] for a rank-1 logit vector.
Var softmax_cross_entropy(const Var& logits, std::size_t target);

}  // namespace ops
}  // namespace vipt
