#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "advseg/core.hpp"

namespace advseg {

enum class Mode { train, infer };

namespace nn {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapM = Eigen::Map<MatRM<S>>;
template <typename S>
using MapC = Eigen::Map<const MatRM<S>>;

struct ConvSpec {
  int kh = 3, kw = 3, stride = 1, pad = 1;
  int out_h(int h) const { return (h + 2 * pad - kh) / stride + 1; }
  int out_w(int w) const { return (w + 2 * pad - kw) / stride + 1; }
};

namespace detail {

/// Unfold one sample into a (Ci*kh*kw) x (Ho*Wo) patch matrix, zero padded.
template <typename S>
void im2col(const S* x, int ci, int h, int w, const ConvSpec& cs, S* col) {
  const int ho = cs.out_h(h), wo = cs.out_w(w);
  S* dst = col;
  for (int c = 0; c < ci; ++c) {
    const S* src = x + static_cast<size_t>(c) * h * w;
    for (int ky = 0; ky < cs.kh; ++ky)
      for (int kx = 0; kx < cs.kw; ++kx) {
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * cs.stride - cs.pad + ky;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, S(0));
            dst += wo;
            continue;
          }
          const S* row = src + static_cast<size_t>(iy) * w;
          if (cs.stride == 1) {
            for (int ox = 0; ox < wo; ++ox) {
              int ix = ox - cs.pad + kx;
              dst[ox] = (ix >= 0 && ix < w) ? row[ix] : S(0);
            }
          } else {
            for (int ox = 0; ox < wo; ++ox) {
              int ix = ox * cs.stride - cs.pad + kx;
              dst[ox] = (ix >= 0 && ix < w) ? row[ix] : S(0);
            }
          }
          dst += wo;
        }
      }
  }
}

/// Fold a patch-matrix gradient back onto the input gradient (accumulates).
template <typename S>
void col2im(const S* col, int ci, int h, int w, const ConvSpec& cs, S* dx) {
  const int ho = cs.out_h(h), wo = cs.out_w(w);
  const S* src = col;
  for (int c = 0; c < ci; ++c) {
    S* dst = dx + static_cast<size_t>(c) * h * w;
    for (int ky = 0; ky < cs.kh; ++ky)
      for (int kx = 0; kx < cs.kw; ++kx) {
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * cs.stride - cs.pad + ky;
          if (iy < 0 || iy >= h) {
            src += wo;
            continue;
          }
          S* row = dst + static_cast<size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * cs.stride - cs.pad + kx;
            if (ix >= 0 && ix < w) row[ix] += src[ox];
          }
          src += wo;
        }
      }
  }
}

}  // namespace detail

/// y = w (*) x + b with zero padding. w is (Co, Ci, kh, kw) flattened.
template <typename S>
Tensor4<S> conv2d_forward(const Tensor4<S>& x, const std::vector<S>& w, const std::vector<S>& b,
                          int co, const ConvSpec& cs) {
  const int ci = x.c, ho = cs.out_h(x.h), wo = cs.out_w(x.w);
  require(w.size() == static_cast<size_t>(co) * ci * cs.kh * cs.kw, "shape",
          "conv kernel size mismatch");
  require(b.size() == static_cast<size_t>(co), "shape", "conv bias size mismatch");
  Tensor4<S> y(x.n, co, ho, wo);
  const int patch = ci * cs.kh * cs.kw;
  std::vector<S> col(static_cast<size_t>(patch) * ho * wo);
  MapC<S> wm(w.data(), co, patch);
  for (int i = 0; i < x.n; ++i) {
    detail::im2col(x.plane(i, 0), ci, x.h, x.w, cs, col.data());
    MapC<S> cm(col.data(), patch, ho * wo);
    MapM<S> ym(y.plane(i, 0), co, ho * wo);
    ym.noalias() = wm * cm;
    for (int c = 0; c < co; ++c) {
      S* p = y.plane(i, c);
      for (int j = 0; j < ho * wo; ++j) p[j] += b[c];
    }
  }
  return y;
}

/// Gradients of conv2d. dw/db accumulate over the batch; dx is overwritten.
template <typename S>
void conv2d_backward(const Tensor4<S>& x, const std::vector<S>& w, int co, const ConvSpec& cs,
                     const Tensor4<S>& dy, Tensor4<S>* dx, std::vector<S>* dw,
                     std::vector<S>* db) {
  const int ci = x.c, ho = cs.out_h(x.h), wo = cs.out_w(x.w);
  const int patch = ci * cs.kh * cs.kw;
  require(dy.n == x.n && dy.c == co && dy.h == ho && dy.w == wo, "shape",
          "conv upstream gradient shape mismatch");
  std::vector<S> col(static_cast<size_t>(patch) * ho * wo);
  std::vector<S> dcol(static_cast<size_t>(patch) * ho * wo);
  MapC<S> wm(w.data(), co, patch);
  if (dx) {
    *dx = Tensor4<S>(x.n, x.c, x.h, x.w);
  }
  if (dw) dw->assign(w.size(), S(0));
  if (db) db->assign(co, S(0));
  for (int i = 0; i < x.n; ++i) {
    MapC<S> dym(dy.plane(i, 0), co, ho * wo);
    if (dw) {
      detail::im2col(x.plane(i, 0), ci, x.h, x.w, cs, col.data());
      MapC<S> cm(col.data(), patch, ho * wo);
      MapM<S> dwm(dw->data(), co, patch);
      dwm.noalias() += dym * cm.transpose();
    }
    if (db) {
      for (int c = 0; c < co; ++c) {
        const S* p = dy.plane(i, c);
        S acc = S(0);
        for (int j = 0; j < ho * wo; ++j) acc += p[j];
        (*db)[c] += acc;
      }
    }
    if (dx) {
      MapM<S> dcm(dcol.data(), patch, ho * wo);
      dcm.noalias() = wm.transpose() * dym;
      detail::col2im(dcol.data(), ci, x.h, x.w, cs, dx->plane(i, 0));
    }
  }
}

template <typename S>
struct BnTrace {
  Mode mode = Mode::train;
  std::vector<S> mean, invstd;          // statistics used for normalization
  std::vector<double> batch_mean, batch_var;  // pending running-stat update (train)
};

/// Per-channel batch normalization over (N, H, W). Train mode normalizes by
/// batch statistics (biased variance); infer mode by the running statistics.
/// Running statistics are never written here; the pending update lives in the
/// trace until a caller commits it.
template <typename S>
Tensor4<S> batchnorm_forward(const Tensor4<S>& x, const std::vector<S>& gamma,
                             const std::vector<S>& beta, const std::vector<S>& run_mean,
                             const std::vector<S>& run_var, Mode mode, double eps,
                             BnTrace<S>* trace) {
  const int C = x.c;
  require(gamma.size() == static_cast<size_t>(C) && beta.size() == static_cast<size_t>(C) &&
              run_mean.size() == static_cast<size_t>(C) && run_var.size() == static_cast<size_t>(C),
          "shape", "batchnorm parameter size mismatch");
  const size_t m = static_cast<size_t>(x.n) * x.h * x.w;
  Tensor4<S> y(x.n, x.c, x.h, x.w);
  std::vector<S> mean(C), invstd(C);
  std::vector<double> bmean(C, 0.0), bvar(C, 0.0);
  if (mode == Mode::train) {
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int i = 0; i < x.n; ++i) {
        const S* p = x.plane(i, c);
        for (size_t j = 0; j < static_cast<size_t>(x.h) * x.w; ++j) acc += static_cast<double>(p[j]);
      }
      double mu = acc / static_cast<double>(m);
      double acc2 = 0.0;
      for (int i = 0; i < x.n; ++i) {
        const S* p = x.plane(i, c);
        for (size_t j = 0; j < static_cast<size_t>(x.h) * x.w; ++j) {
          double d = static_cast<double>(p[j]) - mu;
          acc2 += d * d;
        }
      }
      double var = acc2 / static_cast<double>(m);
      bmean[c] = mu;
      bvar[c] = var;
      mean[c] = static_cast<S>(mu);
      invstd[c] = static_cast<S>(1.0 / std::sqrt(var + eps));
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = run_mean[c];
      invstd[c] = static_cast<S>(1.0 / std::sqrt(static_cast<double>(run_var[c]) + eps));
    }
  }
  for (int c = 0; c < C; ++c) {
    const S mu = mean[c], is = invstd[c], g = gamma[c], bt = beta[c];
    for (int i = 0; i < x.n; ++i) {
      const S* p = x.plane(i, c);
      S* q = y.plane(i, c);
      for (size_t j = 0; j < static_cast<size_t>(x.h) * x.w; ++j)
        q[j] = g * (p[j] - mu) * is + bt;
    }
  }
  if (trace) {
    trace->mode = mode;
    trace->mean = std::move(mean);
    trace->invstd = std::move(invstd);
    trace->batch_mean = std::move(bmean);
    trace->batch_var = std::move(bvar);
  }
  return y;
}

/// Backward through a train-mode batchnorm (batch statistics participate in
/// the gradient).
template <typename S>
void batchnorm_backward(const Tensor4<S>& x, const std::vector<S>& gamma, const BnTrace<S>& trace,
                        const Tensor4<S>& dy, Tensor4<S>* dx, std::vector<S>* dgamma,
                        std::vector<S>* dbeta) {
  require(trace.mode == Mode::train, "config", "batchnorm backward requires a train-mode trace");
  const int C = x.c;
  const double m = static_cast<double>(x.n) * x.h * x.w;
  *dx = Tensor4<S>(x.n, x.c, x.h, x.w);
  dgamma->assign(C, S(0));
  dbeta->assign(C, S(0));
  const size_t plane = static_cast<size_t>(x.h) * x.w;
  for (int c = 0; c < C; ++c) {
    const double mu = trace.mean[c], is = trace.invstd[c], g = gamma[c];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int i = 0; i < x.n; ++i) {
      const S* px = x.plane(i, c);
      const S* pd = dy.plane(i, c);
      for (size_t j = 0; j < plane; ++j) {
        double xhat = (static_cast<double>(px[j]) - mu) * is;
        sum_dy += pd[j];
        sum_dy_xhat += pd[j] * xhat;
      }
    }
    (*dgamma)[c] = static_cast<S>(sum_dy_xhat);
    (*dbeta)[c] = static_cast<S>(sum_dy);
    for (int i = 0; i < x.n; ++i) {
      const S* px = x.plane(i, c);
      const S* pd = dy.plane(i, c);
      S* pq = dx->plane(i, c);
      for (size_t j = 0; j < plane; ++j) {
        double xhat = (static_cast<double>(px[j]) - mu) * is;
        double t = static_cast<double>(pd[j]) - sum_dy / m - xhat * sum_dy_xhat / m;
        pq[j] = static_cast<S>(g * is * t);
      }
    }
  }
}

/// y = x for x >= 0, slope[c] * x otherwise.
template <typename S>
Tensor4<S> prelu_forward(const Tensor4<S>& x, const std::vector<S>& slope) {
  require(slope.size() == static_cast<size_t>(x.c), "shape", "prelu slope count mismatch");
  Tensor4<S> y(x.n, x.c, x.h, x.w);
  const size_t plane = static_cast<size_t>(x.h) * x.w;
  for (int i = 0; i < x.n; ++i)
    for (int c = 0; c < x.c; ++c) {
      const S a = slope[c];
      const S* p = x.plane(i, c);
      S* q = y.plane(i, c);
      for (size_t j = 0; j < plane; ++j) q[j] = p[j] >= S(0) ? p[j] : a * p[j];
    }
  return y;
}

template <typename S>
void prelu_backward(const Tensor4<S>& x, const std::vector<S>& slope, const Tensor4<S>& dy,
                    Tensor4<S>* dx, std::vector<S>* dslope) {
  *dx = Tensor4<S>(x.n, x.c, x.h, x.w);
  dslope->assign(slope.size(), S(0));
  const size_t plane = static_cast<size_t>(x.h) * x.w;
  for (int i = 0; i < x.n; ++i)
    for (int c = 0; c < x.c; ++c) {
      const S a = slope[c];
      const S* px = x.plane(i, c);
      const S* pd = dy.plane(i, c);
      S* pq = dx->plane(i, c);
      S acc = S(0);
      for (size_t j = 0; j < plane; ++j) {
        if (px[j] >= S(0)) {
          pq[j] = pd[j];
        } else {
          pq[j] = a * pd[j];
          acc += pd[j] * px[j];
        }
      }
      (*dslope)[c] += acc;
    }
}

/// 2x2 max pooling, stride 2. Ties resolve to the first element in (y, x)
/// scan order; argmax positions are recorded for the backward pass.
template <typename S>
Tensor4<S> maxpool2_forward(const Tensor4<S>& x, std::vector<int32_t>* argmax) {
  require(x.h % 2 == 0 && x.w % 2 == 0, "shape", "maxpool needs even spatial dims");
  Tensor4<S> y(x.n, x.c, x.h / 2, x.w / 2);
  argmax->resize(y.size());
  size_t o = 0;
  for (int i = 0; i < x.n; ++i)
    for (int c = 0; c < x.c; ++c) {
      const S* p = x.plane(i, c);
      S* q = y.plane(i, c);
      for (int yy = 0; yy < y.h; ++yy)
        for (int xx = 0; xx < y.w; ++xx, ++o) {
          int base = 2 * yy * x.w + 2 * xx;
          int best = base;
          S bv = p[base];
          for (int d : {1, x.w, x.w + 1}) {
            if (p[base + d] > bv) {
              bv = p[base + d];
              best = base + d;
            }
          }
          q[static_cast<size_t>(yy) * y.w + xx] = bv;
          (*argmax)[o] = best;
        }
    }
  return y;
}

template <typename S>
Tensor4<S> maxpool2_backward(const Tensor4<S>& dy, int in_h, int in_w,
                             const std::vector<int32_t>& argmax) {
  Tensor4<S> dx(dy.n, dy.c, in_h, in_w);
  size_t o = 0;
  for (int i = 0; i < dy.n; ++i)
    for (int c = 0; c < dy.c; ++c) {
      const S* pd = dy.plane(i, c);
      S* pq = dx.plane(i, c);
      for (size_t j = 0; j < static_cast<size_t>(dy.h) * dy.w; ++j, ++o)
        pq[argmax[o]] += pd[j];
    }
  return dx;
}

template <typename S>
Tensor4<S> upsample2_forward(const Tensor4<S>& x) {
  Tensor4<S> y(x.n, x.c, x.h * 2, x.w * 2);
  for (int i = 0; i < x.n; ++i)
    for (int c = 0; c < x.c; ++c) {
      const S* p = x.plane(i, c);
      S* q = y.plane(i, c);
      for (int yy = 0; yy < x.h; ++yy)
        for (int xx = 0; xx < x.w; ++xx) {
          S v = p[static_cast<size_t>(yy) * x.w + xx];
          size_t b = static_cast<size_t>(2 * yy) * y.w + 2 * xx;
          q[b] = v;
          q[b + 1] = v;
          q[b + y.w] = v;
          q[b + y.w + 1] = v;
        }
    }
  return y;
}

template <typename S>
Tensor4<S> upsample2_backward(const Tensor4<S>& dy) {
  require(dy.h % 2 == 0 && dy.w % 2 == 0, "shape", "upsample backward needs even dims");
  Tensor4<S> dx(dy.n, dy.c, dy.h / 2, dy.w / 2);
  for (int i = 0; i < dy.n; ++i)
    for (int c = 0; c < dy.c; ++c) {
      const S* p = dy.plane(i, c);
      S* q = dx.plane(i, c);
      for (int yy = 0; yy < dx.h; ++yy)
        for (int xx = 0; xx < dx.w; ++xx) {
          size_t b = static_cast<size_t>(2 * yy) * dy.w + 2 * xx;
          q[static_cast<size_t>(yy) * dx.w + xx] = p[b] + p[b + 1] + p[b + dy.w] + p[b + dy.w + 1];
        }
    }
  return dx;
}

/// Channel concatenation, a first.
template <typename S>
Tensor4<S> concat_channels(const Tensor4<S>& a, const Tensor4<S>& b) {
  require(a.n == b.n && a.h == b.h && a.w == b.w, "shape", "concat spatial shape mismatch");
  Tensor4<S> y(a.n, a.c + b.c, a.h, a.w);
  const size_t plane = static_cast<size_t>(a.h) * a.w;
  for (int i = 0; i < a.n; ++i) {
    std::copy_n(a.plane(i, 0), plane * a.c, y.plane(i, 0));
    std::copy_n(b.plane(i, 0), plane * b.c, y.plane(i, a.c));
  }
  return y;
}

template <typename S>
void split_channels(const Tensor4<S>& dy, int ca, Tensor4<S>* da, Tensor4<S>* db) {
  *da = Tensor4<S>(dy.n, ca, dy.h, dy.w);
  *db = Tensor4<S>(dy.n, dy.c - ca, dy.h, dy.w);
  const size_t plane = static_cast<size_t>(dy.h) * dy.w;
  for (int i = 0; i < dy.n; ++i) {
    std::copy_n(dy.plane(i, 0), plane * ca, da->plane(i, 0));
    std::copy_n(dy.plane(i, ca), plane * (dy.c - ca), db->plane(i, 0));
  }
}

/// Mean over the spatial plane per (sample, channel); returns (N, C, 1, 1).
template <typename S>
Tensor4<S> global_avg_pool_forward(const Tensor4<S>& x) {
  Tensor4<S> y(x.n, x.c, 1, 1);
  const size_t plane = static_cast<size_t>(x.h) * x.w;
  for (int i = 0; i < x.n; ++i)
    for (int c = 0; c < x.c; ++c) {
      const S* p = x.plane(i, c);
      double acc = 0.0;
      for (size_t j = 0; j < plane; ++j) acc += static_cast<double>(p[j]);
      y.at(i, c, 0, 0) = static_cast<S>(acc / static_cast<double>(plane));
    }
  return y;
}

template <typename S>
Tensor4<S> global_avg_pool_backward(const Tensor4<S>& dy, int in_h, int in_w) {
  Tensor4<S> dx(dy.n, dy.c, in_h, in_w);
  const S scale = S(1) / static_cast<S>(in_h * in_w);
  for (int i = 0; i < dy.n; ++i)
    for (int c = 0; c < dy.c; ++c) {
      S g = dy.at(i, c, 0, 0) * scale;
      S* p = dx.plane(i, c);
      std::fill(p, p + static_cast<size_t>(in_h) * in_w, g);
    }
  return dx;
}

/// Per-pixel softmax over the channel axis plus its backward (full Jacobian).
template <typename S>
Tensor4<S> softmax_channels(const Tensor4<S>& x) {
  Tensor4<S> y(x.n, x.c, x.h, x.w);
  const size_t plane = static_cast<size_t>(x.h) * x.w;
  std::vector<double> z(x.c);
  for (int i = 0; i < x.n; ++i)
    for (size_t j = 0; j < plane; ++j) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < x.c; ++c) mx = std::max(mx, static_cast<double>(x.plane(i, c)[j]));
      double denom = 0.0;
      for (int c = 0; c < x.c; ++c) {
        z[c] = std::exp(static_cast<double>(x.plane(i, c)[j]) - mx);
        denom += z[c];
      }
      for (int c = 0; c < x.c; ++c) y.plane(i, c)[j] = static_cast<S>(z[c] / denom);
    }
  return y;
}

/// dL/dlogits given dL/dprobs: dz_c = p_c * (dp_c - sum_k p_k dp_k).
template <typename S>
Tensor4<S> softmax_backward(const Tensor4<S>& probs, const Tensor4<S>& dprobs) {
  Tensor4<S> dz(probs.n, probs.c, probs.h, probs.w);
  const size_t plane = static_cast<size_t>(probs.h) * probs.w;
  for (int i = 0; i < probs.n; ++i)
    for (size_t j = 0; j < plane; ++j) {
      double dot = 0.0;
      for (int c = 0; c < probs.c; ++c)
        dot += static_cast<double>(probs.plane(i, c)[j]) * static_cast<double>(dprobs.plane(i, c)[j]);
      for (int c = 0; c < probs.c; ++c) {
        double p = probs.plane(i, c)[j];
        dz.plane(i, c)[j] = static_cast<S>(p * (static_cast<double>(dprobs.plane(i, c)[j]) - dot));
      }
    }
  return dz;
}

}  // namespace nn
}  // namespace advseg
