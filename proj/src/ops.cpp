#include "vipt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "vipt/kernels.hpp"

namespace vipt {

namespace {

void require_rank(const std::string& op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(op + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(t.shape()));
  }
}

void require_same(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError(op, a.shape(), b.shape());
}

void check_linear(const Tensor& x, const Tensor& w, const Tensor* b) {
  require_rank("linear", x, 2);
  require_rank("linear", w, 2);
  if (x.dim(1) != w.dim(0)) throw DimensionError("linear", x.shape(), w.shape());
  if (b && (b->rank() != 1 || b->dim(0) != w.dim(1))) throw DimensionError("linear bias", w.shape(), b->shape());
}

// [outer, len, inner] view of `shape` around `axis`.
void axis_view(const Shape& shape, std::size_t axis, std::size_t& outer, std::size_t& len,
               std::size_t& inner) {
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  len = shape[axis];
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor linear_per_token(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  check_linear(x, weight, &bias);
  Tensor out({x.dim(0), weight.dim(1)});
  kernels::linear_forward(x.span(), weight.span(), bias.span(), out.span(), x.dim(0), x.dim(1), weight.dim(1));
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  std::size_t outer, len, inner;
  axis_view(x.shape(), axis, outer, len, inner);
  Tensor out(x.shape());
  kernels::softmax_forward(x.span(), out.span(), outer, len, inner);
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank("layer_norm", x, 2);
  if (gamma.size() != x.dim(1) || beta.size() != x.dim(1)) throw DimensionError("layer_norm", x.shape(), gamma.shape());
  Tensor out(x.shape());
  std::vector<double> mean(x.dim(0)), rstd(x.dim(0));
  kernels::layer_norm_forward(x.span(), gamma.span(), beta.span(), eps, out.span(), mean, rstd, x.dim(0), x.dim(1));
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  kernels::gelu_forward(x.span(), out.span());
  return out;
}

namespace ops {

Var add(const Var& a, const Var& b) {
  require_same("add", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t in : {ia, ib}) {
      if (!t.requires_grad(in)) continue;
      Tensor& d = t.grad_buffer(in);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same("sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& d = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& d = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      const Tensor& vb = t.value(ib);
      Tensor& d = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * vb[i];
    }
    if (t.requires_grad(ib)) {
      const Tensor& va = t.value(ia);
      Tensor& d = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * va[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= factor;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, factor](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
  });
}

Var affine(const Var& x, std::vector<double> a, std::vector<double> b) {
  const Tensor& v = x.value();
  if (a.size() != v.size() || b.size() != v.size()) {
    throw DimensionError("affine: coefficient count does not match " + shape_str(v.shape()));
  }
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = a[i] * v[i] + b[i];
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, a = std::move(a)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * a[i];
  });
}

Var gelu(const Var& x) {
  Tensor out = vipt::gelu(x.value());
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    kernels::gelu_backward(t.value(ix).span(), t.grad(self).span(), t.grad_buffer(ix).span());
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(x.value()[i]);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const std::size_t ix = x.id();
  return x.tape().record(Tensor::scalar(s), {x}, [ix](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (auto& v : t.grad_buffer(ix).values()) v += g;
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

Var transpose(const Var& x) {
  const Tensor& v = x.value();
  require_rank("transpose", v, 2);
  const std::size_t rows = v.dim(0), cols = v.dim(1);
  Tensor out({cols, rows});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out.at(j, i) = v.at(i, j);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad_buffer(ix);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) d.at(i, j) += g.at(j, i);
  });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  const Tensor& v = x.value();
  if (v.rank() < 1 || begin >= end || end > v.dim(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_str(v.shape()));
  }
  const std::size_t row = v.size() / v.dim(0);
  Shape shape = v.shape();
  shape[0] = end - begin;
  std::vector<double> data(v.values().begin() + begin * row, v.values().begin() + end * row);
  const std::size_t ix = x.id();
  return x.tape().record(Tensor(std::move(shape), std::move(data)), {x},
                         [ix, begin, row](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           Tensor& d = t.grad_buffer(ix);
                           for (std::size_t i = 0; i < g.size(); ++i) d[begin * row + i] += g[i];
                         });
}

Var concat_rows(const Var& a, const Var& b) {
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  if (va.rank() != vb.rank() || va.rank() < 1 ||
      !std::equal(va.shape().begin() + 1, va.shape().end(), vb.shape().begin() + 1)) {
    throw DimensionError("concat_rows", va.shape(), vb.shape());
  }
  Shape shape = va.shape();
  shape[0] += vb.dim(0);
  std::vector<double> data = va.values();
  data.insert(data.end(), vb.values().begin(), vb.values().end());
  const std::size_t ia = a.id(), ib = b.id(), na = va.size();
  return a.tape().record(Tensor(std::move(shape), std::move(data)), {a, b},
                         [ia, ib, na](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           if (t.requires_grad(ia)) {
                             Tensor& d = t.grad_buffer(ia);
                             for (std::size_t i = 0; i < na; ++i) d[i] += g[i];
                           }
                           if (t.requires_grad(ib)) {
                             Tensor& d = t.grad_buffer(ib);
                             for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[na + i];
                           }
                         });
}

Var pick(const Var& x, std::vector<std::size_t> indices) {
  const Tensor& v = x.value();
  Tensor out({indices.size()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= v.size()) throw DimensionError("pick: index out of range for " + shape_str(v.shape()));
    out[i] = v[indices[i]];
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, indices = std::move(indices)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad_buffer(ix);
    for (std::size_t i = 0; i < indices.size(); ++i) d[indices[i]] += g[i];
  });
}

namespace {

// Flat source index for every element of the patchified matrix.
std::vector<std::size_t> patch_gather_index(std::size_t channels, std::size_t h, std::size_t w,
                                            std::size_t patch) {
  const std::size_t gh = h / patch, gw = w / patch;
  const std::size_t row_len = channels * patch * patch;
  std::vector<std::size_t> index(gh * gw * row_len);
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t dy = 0; dy < patch; ++dy)
          for (std::size_t dx = 0; dx < patch; ++dx) {
            const std::size_t token = py * gw + px;
            const std::size_t col = (c * patch + dy) * patch + dx;
            index[token * row_len + col] = (c * h + py * patch + dy) * w + px * patch + dx;
          }
  return index;
}

}  // namespace

Var patchify(const Var& image, std::size_t patch) {
  const Tensor& v = image.value();
  require_rank("patchify", v, 3);
  if (patch == 0 || v.dim(1) % patch != 0 || v.dim(2) % patch != 0) {
    throw DimensionError("patchify: image " + shape_str(v.shape()) + " not divisible by patch " +
                         std::to_string(patch));
  }
  auto index = patch_gather_index(v.dim(0), v.dim(1), v.dim(2), patch);
  const std::size_t tokens = (v.dim(1) / patch) * (v.dim(2) / patch);
  Tensor out({tokens, v.dim(0) * patch * patch});
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = v[index[i]];
  const std::size_t ix = image.id();
  return image.tape().record(std::move(out), {image}, [ix, index = std::move(index)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad_buffer(ix);
    for (std::size_t i = 0; i < index.size(); ++i) d[index[i]] += g[i];
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const bool has_bias = bias.valid();
  check_linear(x.value(), weight.value(), has_bias ? &bias.value() : nullptr);
  const std::size_t n = x.value().dim(0), k = x.value().dim(1), m = weight.value().dim(1);
  Tensor out({n, m});
  kernels::linear_forward(x.value().span(), weight.value().span(),
                          has_bias ? bias.value().span() : std::span<const double>(), out.span(), n, k, m);
  const std::size_t ix = x.id(), iw = weight.id(), ib = has_bias ? bias.id() : 0;
  auto backward = [ix, iw, ib, has_bias, n, k, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ix)) kernels::linear_backward_input(g.span(), t.value(iw).span(), t.grad_buffer(ix).span(), n, k, m);
    if (t.requires_grad(iw)) kernels::linear_backward_weight(t.value(ix).span(), g.span(), t.grad_buffer(iw).span(), n, k, m);
    if (has_bias && t.requires_grad(ib)) kernels::column_sum(g.span(), t.grad_buffer(ib).span(), n, m);
  };
  if (has_bias) return x.tape().record(std::move(out), {x, weight, bias}, backward);
  return x.tape().record(std::move(out), {x, weight}, backward);
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& v = x.value();
  require_rank("layer_norm", v, 2);
  const std::size_t n = v.dim(0), d = v.dim(1);
  if (gamma.value().size() != d) throw DimensionError("layer_norm gamma", v.shape(), gamma.shape());
  if (beta.value().size() != d) throw DimensionError("layer_norm beta", v.shape(), beta.shape());
  Tensor out(v.shape());
  auto stats = std::make_shared<std::vector<double>>(2 * n);
  std::span<double> mean(stats->data(), n), rstd(stats->data() + n, n);
  kernels::layer_norm_forward(v.span(), gamma.value().span(), beta.value().span(), eps, out.span(), mean, rstd, n, d);
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(std::move(out), {x, gamma, beta}, [ix, ig, ib, n, d, stats](Tape& t, std::size_t self) {
    std::span<const double> mean(stats->data(), n), rstd(stats->data() + n, n);
    kernels::layer_norm_backward(t.value(ix).span(), t.value(ig).span(), mean, rstd, t.grad(self).span(),
                                 t.requires_grad(ix) ? t.grad_buffer(ix).span() : std::span<double>(),
                                 t.requires_grad(ig) ? t.grad_buffer(ig).span() : std::span<double>(),
                                 t.requires_grad(ib) ? t.grad_buffer(ib).span() : std::span<double>(), n, d);
  });
}

Var softmax(const Var& x, std::size_t axis) {
  std::size_t outer, len, inner;
  axis_view(x.shape(), axis, outer, len, inner);
  Tensor out = vipt::softmax(x.value(), axis);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, outer, len, inner](Tape& t, std::size_t self) {
    kernels::softmax_backward(t.value(self).span(), t.grad(self).span(), t.grad_buffer(ix).span(), outer, len, inner);
  });
}

Var attention(const Var& qkv, std::size_t heads) {
  const Tensor& v = qkv.value();
  require_rank("attention", v, 2);
  if (heads == 0 || v.dim(1) % 3 != 0 || (v.dim(1) / 3) % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(v.dim(1)) + " is not 3 * heads * head_dim with heads = " +
                         std::to_string(heads));
  }
  const std::size_t n = v.dim(0), d = v.dim(1) / 3;
  Tensor out({n, d});
  auto probs = std::make_shared<std::vector<double>>(heads * n * n);
  kernels::attention_forward(v.span(), out.span(), *probs, n, d, heads);
  const std::size_t ix = qkv.id();
  return qkv.tape().record(std::move(out), {qkv}, [ix, n, d, heads, probs](Tape& t, std::size_t self) {
    kernels::attention_backward(t.value(ix).span(), *probs, t.grad(self).span(), t.grad_buffer(ix).span(), n, d, heads);
  });
}

Var conv3x3(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& v = x.value();
  const Tensor& w = weight.value();
  require_rank("conv3x3", v, 3);
  require_rank("conv3x3", w, 4);
  if (w.dim(1) != v.dim(0) || w.dim(2) != 3 || w.dim(3) != 3) throw DimensionError("conv3x3", v.shape(), w.shape());
  if (bias.value().size() != w.dim(0)) throw DimensionError("conv3x3 bias", w.shape(), bias.shape());
  const std::size_t cin = v.dim(0), cout = w.dim(0), h = v.dim(1), wd = v.dim(2);
  Tensor out({cout, h, wd});
  kernels::conv3x3_forward(v.span(), w.span(), bias.value().span(), out.span(), cin, cout, h, wd);
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.tape().record(std::move(out), {x, weight, bias}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ix)) kernels::conv3x3_backward_input(t.value(iw).span(), g.span(), t.grad_buffer(ix).span(), cin, cout, h, wd);
    if (t.requires_grad(iw)) kernels::conv3x3_backward_weight(t.value(ix).span(), g.span(), t.grad_buffer(iw).span(), cin, cout, h, wd);
    if (t.requires_grad(ib)) {
      Tensor& db = t.grad_buffer(ib);
      for (std::size_t c = 0; c < cout; ++c)
        for (std::size_t p = 0; p < h * wd; ++p) db[c] += g[c * h * wd + p];
    }
  });
}

Var fovea(const Var& m, const Var& lambda) {
  const Tensor& v = m.value();
  require_rank("fovea", v, 2);
  if (lambda.value().size() != 1) throw DimensionError("fovea: lambda must be a scalar, got " + shape_str(lambda.shape()));
  const std::size_t n = v.dim(0), d = v.dim(1);
  Tensor out(v.shape());
  auto attn = std::make_shared<std::vector<double>>(n * d);
  kernels::fovea_forward(v.span(), lambda.value()[0], out.span(), *attn, n, d);
  const std::size_t im = m.id(), il = lambda.id();
  return m.tape().record(std::move(out), {m, lambda}, [im, il, n, d, attn](Tape& t, std::size_t self) {
    const double lam = t.value(il)[0];
    const double dlam = kernels::fovea_backward(t.value(im).span(), *attn, lam, t.grad(self).span(),
                                                t.requires_grad(im) ? t.grad_buffer(im).span() : std::span<double>(), n, d);
    if (t.requires_grad(il)) t.grad_buffer(il)[0] += dlam;
  });
}

Var softmax_cross_entropy(const Var& logits, std::size_t target) {
  const Tensor& v = logits.value();
  require_rank("softmax_cross_entropy", v, 1);
  if (target >= v.size()) throw DimensionError("softmax_cross_entropy: target index out of range");
  Tensor p = vipt::softmax(v, 0);
  const double loss = -std::log(p[target]);
  const std::size_t ix = logits.id();
  return logits.tape().record(Tensor::scalar(loss), {logits}, [ix, target, p = std::move(p)](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    Tensor& d = t.grad_buffer(ix);
    for (std::size_t i = 0; i < p.size(); ++i) d[i] += g * (p[i] - (i == target ? 1.0 : 0.0));
  });
}

}  // namespace ops
}  // namespace vipt
