#include "vipt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vipt::kernels {

namespace {

// Below this many multiply-adds a kernel stays on the calling thread.
constexpr std::size_t kParallelWork = 1 << 15;

using Index = std::ptrdiff_t;

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void linear_forward(In x, In w, In b, Out out, std::size_t n, std::size_t k, std::size_t m) {
  const bool parallel = n * k * m > kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (Index row = 0; row < static_cast<Index>(n); ++row) {
    double* o = out.data() + row * m;
    const double* xr = x.data() + row * k;
    std::fill(o, o + m, 0.0);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double xv = xr[kk];
      const double* wr = w.data() + kk * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += xv * wr[j];
    }
    if (!b.empty()) {
      for (std::size_t j = 0; j < m; ++j) o[j] += b[j];
    }
  }
}

void linear_backward_input(In dy, In w, Out dx, std::size_t n, std::size_t k, std::size_t m) {
  const bool parallel = n * k * m > kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (Index row = 0; row < static_cast<Index>(n); ++row) {
    const double* g = dy.data() + row * m;
    double* d = dx.data() + row * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double* wr = w.data() + kk * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += g[j] * wr[j];
      d[kk] += s;
    }
  }
}

void linear_backward_weight(In x, In dy, Out dw, std::size_t n, std::size_t k, std::size_t m) {
  const bool parallel = n * k * m > kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (Index kk = 0; kk < static_cast<Index>(k); ++kk) {
    double* d = dw.data() + kk * m;
    for (std::size_t row = 0; row < n; ++row) {
      const double xv = x[row * k + kk];
      const double* g = dy.data() + row * m;
      for (std::size_t j = 0; j < m; ++j) d[j] += xv * g[j];
    }
  }
}

void column_sum(In dy, Out db, std::size_t n, std::size_t m) {
  for (std::size_t row = 0; row < n; ++row) {
    const double* g = dy.data() + row * m;
    for (std::size_t j = 0; j < m; ++j) db[j] += g[j];
  }
}

void layer_norm_forward(In x, In gamma, In beta, double eps, Out out, Out mean, Out rstd,
                        std::size_t n, std::size_t d) {
  const bool parallel = n * d > kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (Index row = 0; row < static_cast<Index>(n); ++row) {
    const double* xr = x.data() + row * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double r = 1.0 / std::sqrt(var + eps);
    mean[row] = mu;
    rstd[row] = r;
    double* o = out.data() + row * d;
    for (std::size_t j = 0; j < d; ++j) o[j] = (xr[j] - mu) * r * gamma[j] + beta[j];
  }
}

void layer_norm_backward(In x, In gamma, In mean, In rstd, In dy, Out dx, Out dgamma, Out dbeta,
                         std::size_t n, std::size_t d) {
  if (!dx.empty()) {
    const bool parallel = n * d > kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
    for (Index row = 0; row < static_cast<Index>(n); ++row) {
      const double* xr = x.data() + row * d;
      const double* g = dy.data() + row * d;
      const double mu = mean[row];
      const double r = rstd[row];
      double sum_dxhat = 0.0;
      double sum_dxhat_xhat = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double dxhat = g[j] * gamma[j];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * (xr[j] - mu) * r;
      }
      const double inv_d = 1.0 / static_cast<double>(d);
      double* o = dx.data() + row * d;
      for (std::size_t j = 0; j < d; ++j) {
        const double xhat = (xr[j] - mu) * r;
        o[j] += r * (g[j] * gamma[j] - sum_dxhat * inv_d - xhat * sum_dxhat_xhat * inv_d);
      }
    }
  }
  for (std::size_t row = 0; row < n; ++row) {
    const double* xr = x.data() + row * d;
    const double* g = dy.data() + row * d;
    for (std::size_t j = 0; j < d; ++j) {
      if (!dgamma.empty()) dgamma[j] += g[j] * (xr[j] - mean[row]) * rstd[row];
      if (!dbeta.empty()) dbeta[j] += g[j];
    }
  }
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_derivative(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

void gelu_forward(In x, Out out) {
  const bool parallel = x.size() > kParallelWork / 8;
#pragma omp parallel for schedule(static) if (parallel)
  for (Index i = 0; i < static_cast<Index>(x.size()); ++i) out[i] = gelu(x[i]);
}

void gelu_backward(In x, In dy, Out dx) {
  const bool parallel = x.size() > kParallelWork / 8;
#pragma omp parallel for schedule(static) if (parallel)
  for (Index i = 0; i < static_cast<Index>(x.size()); ++i) dx[i] += dy[i] * gelu_derivative(x[i]);
}

void softmax_forward(In x, Out out, std::size_t outer, std::size_t len, std::size_t inner) {
  const bool parallel = outer * len * inner > kParallelWork / 4;
#pragma omp parallel for collapse(2) schedule(static) if (parallel)
  for (Index o = 0; o < static_cast<Index>(outer); ++o) {
    for (Index t = 0; t < static_cast<Index>(inner); ++t) {
      const std::size_t base = o * len * inner + t;
      double mx = x[base];
      for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, x[base + l * inner]);
      double s = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double e = std::exp(x[base + l * inner] - mx);
        out[base + l * inner] = e;
        s += e;
      }
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= s;
    }
  }
}

void softmax_backward(In y, In dy, Out dx, std::size_t outer, std::size_t len, std::size_t inner) {
  const bool parallel = outer * len * inner > kParallelWork / 4;
#pragma omp parallel for collapse(2) schedule(static) if (parallel)
  for (Index o = 0; o < static_cast<Index>(outer); ++o) {
    for (Index t = 0; t < static_cast<Index>(inner); ++t) {
      const std::size_t base = o * len * inner + t;
      double dot = 0.0;
      for (std::size_t l = 0; l < len; ++l) dot += y[base + l * inner] * dy[base + l * inner];
      for (std::size_t l = 0; l < len; ++l) {
        const std::size_t idx = base + l * inner;
        dx[idx] += y[idx] * (dy[idx] - dot);
      }
    }
  }
}

void attention_forward(In qkv, Out out, Out probs, std::size_t n, std::size_t d, std::size_t heads) {
  const std::size_t hd = d / heads;
  const std::size_t stride = 3 * d;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const bool parallel = n * n * d > kParallelWork;
#pragma omp parallel for collapse(2) schedule(static) if (parallel)
  for (Index h = 0; h < static_cast<Index>(heads); ++h) {
    for (Index i = 0; i < static_cast<Index>(n); ++i) {
      const double* q = qkv.data() + i * stride + h * hd;
      double* p = probs.data() + (h * n + i) * n;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) {
        const double* kj = qkv.data() + j * stride + d + h * hd;
        double s = 0.0;
        for (std::size_t t = 0; t < hd; ++t) s += q[t] * kj[t];
        p[j] = s * scale;
        mx = std::max(mx, p[j]);
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        p[j] = std::exp(p[j] - mx);
        sum += p[j];
      }
      for (std::size_t j = 0; j < n; ++j) p[j] /= sum;
      double* o = out.data() + i * d + h * hd;
      std::fill(o, o + hd, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const double* vj = qkv.data() + j * stride + 2 * d + h * hd;
        for (std::size_t t = 0; t < hd; ++t) o[t] += p[j] * vj[t];
      }
    }
  }
}

void attention_backward(In qkv, In probs, In dout, Out dqkv, std::size_t n, std::size_t d,
                        std::size_t heads) {
  const std::size_t hd = d / heads;
  const std::size_t stride = 3 * d;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const bool parallel = n * n * d > kParallelWork;
  std::vector<double> dscore(heads * n * n);

#pragma omp parallel for collapse(2) schedule(static) if (parallel)
  for (Index h = 0; h < static_cast<Index>(heads); ++h) {
    for (Index i = 0; i < static_cast<Index>(n); ++i) {
      const double* p = probs.data() + (h * n + i) * n;
      const double* go = dout.data() + i * d + h * hd;
      double* ds = dscore.data() + (h * n + i) * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double* vj = qkv.data() + j * stride + 2 * d + h * hd;
        double s = 0.0;
        for (std::size_t t = 0; t < hd; ++t) s += go[t] * vj[t];
        ds[j] = s;
        dot += p[j] * s;
      }
      double* dq = dqkv.data() + i * stride + h * hd;
      for (std::size_t j = 0; j < n; ++j) {
        ds[j] = p[j] * (ds[j] - dot) * scale;
        const double* kj = qkv.data() + j * stride + d + h * hd;
        for (std::size_t t = 0; t < hd; ++t) dq[t] += ds[j] * kj[t];
      }
    }
  }

#pragma omp parallel for collapse(2) schedule(static) if (parallel)
  for (Index h = 0; h < static_cast<Index>(heads); ++h) {
    for (Index j = 0; j < static_cast<Index>(n); ++j) {
      double* dk = dqkv.data() + j * stride + d + h * hd;
      double* dv = dqkv.data() + j * stride + 2 * d + h * hd;
      for (std::size_t i = 0; i < n; ++i) {
        const double ds = dscore[(h * n + i) * n + j];
        const double p = probs[(h * n + i) * n + j];
        const double* qi = qkv.data() + i * stride + h * hd;
        const double* go = dout.data() + i * d + h * hd;
        for (std::size_t t = 0; t < hd; ++t) {
          dk[t] += ds * qi[t];
          dv[t] += p * go[t];
        }
      }
    }
  }
}

void conv3x3_forward(In x, In weight, In bias, Out out, std::size_t cin, std::size_t cout,
                     std::size_t h, std::size_t w) {
  const bool parallel = cin * cout * h * w * 9 > kParallelWork;
  const std::size_t plane = h * w;
#pragma omp parallel for schedule(static) if (parallel)
  for (Index co = 0; co < static_cast<Index>(cout); ++co) {
    double* o = out.data() + co * plane;
    std::fill(o, o + plane, bias.empty() ? 0.0 : bias[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* in = x.data() + ci * plane;
      const double* wk = weight.data() + (co * cin + ci) * 9;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const Index iy = static_cast<Index>(y + ky) - 1;
          if (iy < 0 || iy >= static_cast<Index>(h)) continue;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const double wv = wk[ky * 3 + kx];
            const std::size_t x0 = kx == 0 ? 1 : 0;
            const std::size_t x1 = kx == 2 ? w - 1 : w;
            const double* row = in + iy * w + kx - 1;
            for (std::size_t xx = x0; xx < x1; ++xx) o[y * w + xx] += wv * row[xx];
          }
        }
      }
    }
  }
}

void conv3x3_backward_input(In weight, In dout, Out dx, std::size_t cin, std::size_t cout,
                            std::size_t h, std::size_t w) {
  const bool parallel = cin * cout * h * w * 9 > kParallelWork;
  const std::size_t plane = h * w;
#pragma omp parallel for schedule(static) if (parallel)
  for (Index ci = 0; ci < static_cast<Index>(cin); ++ci) {
    double* d = dx.data() + ci * plane;
    for (std::size_t co = 0; co < cout; ++co) {
      const double* g = dout.data() + co * plane;
      const double* wk = weight.data() + (co * cin + ci) * 9;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const Index iy = static_cast<Index>(y + ky) - 1;
          if (iy < 0 || iy >= static_cast<Index>(h)) continue;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const double wv = wk[ky * 3 + kx];
            const std::size_t x0 = kx == 0 ? 1 : 0;
            const std::size_t x1 = kx == 2 ? w - 1 : w;
            double* row = d + iy * w + kx - 1;
            for (std::size_t xx = x0; xx < x1; ++xx) row[xx] += wv * g[y * w + xx];
          }
        }
      }
    }
  }
}

void conv3x3_backward_weight(In x, In dout, Out dweight, std::size_t cin, std::size_t cout,
                             std::size_t h, std::size_t w) {
  const bool parallel = cin * cout * h * w * 9 > kParallelWork;
  const std::size_t plane = h * w;
#pragma omp parallel for schedule(static) if (parallel)
  for (Index co = 0; co < static_cast<Index>(cout); ++co) {
    const double* g = dout.data() + co * plane;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* in = x.data() + ci * plane;
      double* dw = dweight.data() + (co * cin + ci) * 9;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          double s = 0.0;
          const std::size_t x0 = kx == 0 ? 1 : 0;
          const std::size_t x1 = kx == 2 ? w - 1 : w;
          for (std::size_t y = 0; y < h; ++y) {
            const Index iy = static_cast<Index>(y + ky) - 1;
            if (iy < 0 || iy >= static_cast<Index>(h)) continue;
            const double* row = in + iy * w + kx - 1;
            for (std::size_t xx = x0; xx < x1; ++xx) s += g[y * w + xx] * row[xx];
          }
          dw[ky * 3 + kx] += s;
        }
      }
    }
  }
}

void fovea_forward(In m, double lambda, Out out, Out attn, std::size_t n, std::size_t d) {
  softmax_forward(m, attn, 1, n, d);
  for (std::size_t i = 0; i < n * d; ++i) out[i] = m[i] * (lambda * attn[i]);
}

double fovea_backward(In m, In attn, double lambda, In dout, Out dm, std::size_t n, std::size_t d) {
  std::vector<double> dlambda_per_channel(d, 0.0);
#pragma omp parallel for schedule(static) if (n * d > kParallelWork / 4)
  for (Index c = 0; c < static_cast<Index>(d); ++c) {
    double weighted = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t idx = i * d + c;
      weighted += dout[idx] * m[idx] * attn[idx];
    }
    dlambda_per_channel[c] = weighted;
    if (dm.empty()) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t idx = i * d + c;
      dm[idx] += lambda * attn[idx] * (dout[idx] + dout[idx] * m[idx] - weighted);
    }
  }
  double dlambda = 0.0;
  for (double v : dlambda_per_channel) dlambda += v;
  return dlambda;
}

namespace reference {

void linear_forward(In x, In w, In b, Out out, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += x[i * k + kk] * w[kk * m + j];
      out[i * m + j] = b.empty() ? s : s + b[j];
    }
  }
}

void linear_backward_weight(In x, In dy, Out dw, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += x[i * k + kk] * dy[i * m + j];
      dw[kk * m + j] += s;
    }
  }
}

void layer_norm_forward(In x, In gamma, In beta, double eps, Out out, std::size_t n, std::size_t d) {
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x[i * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x[i * d + j] - mu) * (x[i * d + j] - mu);
    var /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      out[i * d + j] = (x[i * d + j] - mu) / std::sqrt(var + eps) * gamma[j] + beta[j];
    }
  }
}

void softmax_forward(In x, Out out, std::size_t outer, std::size_t len, std::size_t inner) {
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t t = 0; t < inner; ++t) {
      double mx = -INFINITY;
      for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, x[(o * len + l) * inner + t]);
      double s = 0.0;
      for (std::size_t l = 0; l < len; ++l) s += std::exp(x[(o * len + l) * inner + t] - mx);
      for (std::size_t l = 0; l < len; ++l) {
        out[(o * len + l) * inner + t] = std::exp(x[(o * len + l) * inner + t] - mx) / s;
      }
    }
  }
}

void attention_forward(In qkv, Out out, std::size_t n, std::size_t d, std::size_t heads) {
  const std::size_t hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> scores(n);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < hd; ++t) {
          s += qkv[i * 3 * d + h * hd + t] * qkv[j * 3 * d + d + h * hd + t];
        }
        scores[j] = s * scale;
      }
      std::vector<double> p(n);
      softmax_forward(scores, p, 1, n, 1);
      for (std::size_t t = 0; t < hd; ++t) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += p[j] * qkv[j * 3 * d + 2 * d + h * hd + t];
        out[i * d + h * hd + t] = s;
      }
    }
  }
}

void conv3x3_forward(In x, In weight, In bias, Out out, std::size_t cin, std::size_t cout,
                     std::size_t h, std::size_t w) {
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        double s = bias.empty() ? 0.0 : bias[co];
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const long iy = static_cast<long>(y + ky) - 1;
              const long ix = static_cast<long>(xx + kx) - 1;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              s += weight[((co * cin + ci) * 3 + ky) * 3 + kx] * x[(ci * h + iy) * w + ix];
            }
          }
        }
        out[(co * h + y) * w + xx] = s;
      }
    }
  }
}

}  // namespace reference

}  // namespace vipt::kernels
