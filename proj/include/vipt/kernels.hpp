#pragma once

// Dense compute kernels behind the differentiable ops.
//
// Every kernel in vipt::kernels parallelizes over independent output rows
// (OpenMP) and accumulates each output element in a fixed serial order, so
// results are bitwise independent of the thread count. vipt::kernels::reference
// holds naive serial versions that the tests and benchmarks compare against.
//
// Layouts are row-major. Backward kernels accumulate (+=) into their outputs.

#include <cstddef>
#include <span>

namespace vipt::kernels {

using In = std::span<const double>;
using Out = std::span<double>;

int max_threads();

// out[n, m] = sum_k x[n, k] * w[k, m] + b[m]. `b` may be empty.
void linear_forward(In x, In w, In b, Out out, std::size_t n, std::size_t k, std::size_t m);
// dx[n, k] += sum_m dy[n, m] * w[k, m]
void linear_backward_input(In dy, In w, Out dx, std::size_t n, std::size_t k, std::size_t m);
// dw[k, m] += sum_n x[n, k] * dy[n, m]
void linear_backward_weight(In x, In dy, Out dw, std::size_t n, std::size_t k, std::size_t m);
// db[m] += sum_n dy[n, m]
void column_sum(In dy, Out db, std::size_t n, std::size_t m);

// Per row of length d: (x - mean) * rstd * gamma + beta. Saves mean / rstd.
void layer_norm_forward(In x, In gamma, In beta, double eps, Out out, Out mean, Out rstd,
                        std::size_t n, std::size_t d);
// Accumulates into dx, dgamma, dbeta (any of them may be empty to skip).
void layer_norm_backward(In x, In gamma, In mean, In rstd, In dy, Out dx, Out dgamma, Out dbeta,
                         std::size_t n, std::size_t d);

double gelu(double x);
double gelu_derivative(double x);
void gelu_forward(In x, Out out);
void gelu_backward(In x, In dy, Out dx);

// Softmax along an axis of length `len` with element stride `inner`, for
// `outer` independent slices (shape viewed as [outer, len, inner]).
void softmax_forward(In x, Out out, std::size_t outer, std::size_t len, std::size_t inner);
void softmax_backward(In y, In dy, Out dx, std::size_t outer, std::size_t len, std::size_t inner);

// Fused multi-head self-attention core. qkv is [n, 3d] holding q | k | v,
// out is [n, d], probs is [heads, n, n] (saved for backward).
void attention_forward(In qkv, Out out, Out probs, std::size_t n, std::size_t d, std::size_t heads);
void attention_backward(In qkv, In probs, In dout, Out dqkv, std::size_t n, std::size_t d,
                        std::size_t heads);

// 3x3 convolution, stride 1, zero "same" padding.
// x [cin, h, w], weight [cout, cin, 3, 3], bias [cout] (may be empty), out [cout, h, w].
void conv3x3_forward(In x, In weight, In bias, Out out, std::size_t cin, std::size_t cout,
                     std::size_t h, std::size_t w);
void conv3x3_backward_input(In weight, In dout, Out dx, std::size_t cin, std::size_t cout,
                            std::size_t h, std::size_t w);
void conv3x3_backward_weight(In x, In dout, Out dweight, std::size_t cin, std::size_t cout,
                             std::size_t h, std::size_t w);

// Fovea over token-major features m [n, d]: for each channel c,
// mask[:, c] = lambda * softmax(m[:, c]) over the n positions; out = m * mask.
// Saves the unscaled softmax in `attn` [n, d].
void fovea_forward(In m, double lambda, Out out, Out attn, std::size_t n, std::size_t d);
// Accumulates dm; returns d(loss)/d(lambda).
double fovea_backward(In m, In attn, double lambda, In dout, Out dm, std::size_t n, std::size_t d);

namespace reference {

void linear_forward(In x, In w, In b, Out out, std::size_t n, std::size_t k, std::size_t m);
void linear_backward_weight(In x, In dy, Out dw, std::size_t n, std::size_t k, std::size_t m);
void layer_norm_forward(In x, In gamma, In beta, double eps, Out out, std::size_t n, std::size_t d);
void softmax_forward(In x, Out out, std::size_t outer, std::size_t len, std::size_t inner);
void attention_forward(In qkv, Out out, std::size_t n, std::size_t d, std::size_t heads);
void conv3x3_forward(In x, In weight, In bias, Out out, std::size_t cin, std::size_t cout,
                     std::size_t h, std::size_t w);

}  // namespace reference

}  // namespace vipt::kernels
