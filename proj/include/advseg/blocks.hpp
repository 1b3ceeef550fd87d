#pragma once

#include <string>
#include <utility>
#include <vector>

#include "advseg/nn.hpp"
#include "advseg/params.hpp"
#include "advseg/rng.hpp"

namespace advseg {

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.9;
inline constexpr double kPreluInit = 0.25;

/// The repeated unit of both networks: per-channel normalization applied to
/// the block input, then the convolution, then PReLU.
namespace block {

template <typename S>
struct Trace {
  Tensor4<S> x_in;      // pre-normalization input
  nn::BnTrace<S> bn;
  Tensor4<S> conv_out;  // pre-activation
  int out_ch = 0;
  nn::ConvSpec conv;
};

template <typename S>
void add_params(ModelParams<S>& p, const std::string& prefix, int in_ch, int out_ch,
                const nn::ConvSpec& cs) {
  p.add(prefix + ".bn_gamma", {in_ch}, true);
  p.add(prefix + ".bn_beta", {in_ch}, true);
  p.add(prefix + ".bn_rmean", {in_ch}, false);
  p.add(prefix + ".bn_rvar", {in_ch}, false);
  p.add(prefix + ".conv_w", {out_ch, in_ch, cs.kh, cs.kw}, true);
  p.add(prefix + ".conv_b", {out_ch}, true);
  p.add(prefix + ".prelu_a", {out_ch}, true);
}

/// He fan-in kernels, identity norm, 0.25 PReLU slopes, unit running variance.
template <typename S>
void init_params(ModelParams<S>& p, const std::string& prefix, Rng& rng) {
  auto& gamma = p.get(prefix + ".bn_gamma");
  std::fill(gamma.v.begin(), gamma.v.end(), S(1));
  auto& rvar = p.get(prefix + ".bn_rvar");
  std::fill(rvar.v.begin(), rvar.v.end(), S(1));
  auto& w = p.get(prefix + ".conv_w");
  const int fan_in = w.shape[1] * w.shape[2] * w.shape[3];
  const double stddev = std::sqrt(2.0 / fan_in);
  for (S& x : w.v) x = static_cast<S>(stddev * rng.normal());
  auto& a = p.get(prefix + ".prelu_a");
  std::fill(a.v.begin(), a.v.end(), static_cast<S>(kPreluInit));
}

template <typename S>
Tensor4<S> forward(const ModelParams<S>& p, const std::string& prefix, const Tensor4<S>& x,
                   const nn::ConvSpec& cs, Mode mode, Trace<S>* tr) {
  const auto& gamma = p.get(prefix + ".bn_gamma").v;
  const auto& beta = p.get(prefix + ".bn_beta").v;
  const auto& rmean = p.get(prefix + ".bn_rmean").v;
  const auto& rvar = p.get(prefix + ".bn_rvar").v;
  const auto& w = p.get(prefix + ".conv_w");
  const auto& bias = p.get(prefix + ".conv_b").v;
  const auto& slope = p.get(prefix + ".prelu_a").v;
  const int out_ch = w.shape[0];

  nn::BnTrace<S> bn_trace;
  Tensor4<S> normed =
      nn::batchnorm_forward(x, gamma, beta, rmean, rvar, mode, kBnEpsilon, &bn_trace);
  Tensor4<S> conv_out = nn::conv2d_forward(normed, w.v, bias, out_ch, cs);
  Tensor4<S> y = nn::prelu_forward(conv_out, slope);
  if (tr) {
    tr->x_in = x;
    tr->bn = std::move(bn_trace);
    tr->conv_out = std::move(conv_out);
    tr->out_ch = out_ch;
    tr->conv = cs;
  }
  return y;
}

/// Re-derive the convolution input from the cached pre-norm input and the
/// statistics recorded in the trace.
template <typename S>
Tensor4<S> recompute_normed(const ModelParams<S>& p, const std::string& prefix,
                            const Trace<S>& tr) {
  const auto& gamma = p.get(prefix + ".bn_gamma").v;
  const auto& beta = p.get(prefix + ".bn_beta").v;
  const Tensor4<S>& x = tr.x_in;
  Tensor4<S> y(x.n, x.c, x.h, x.w);
  const size_t plane = static_cast<size_t>(x.h) * x.w;
  for (int i = 0; i < x.n; ++i)
    for (int c = 0; c < x.c; ++c) {
      const S mu = tr.bn.mean[c], is = tr.bn.invstd[c], g = gamma[c], bt = beta[c];
      const S* px = x.plane(i, c);
      S* py = y.plane(i, c);
      for (size_t j = 0; j < plane; ++j) py[j] = g * (px[j] - mu) * is + bt;
    }
  return y;
}

template <typename S>
Tensor4<S> backward(const ModelParams<S>& p, const std::string& prefix, const Trace<S>& tr,
                    const Tensor4<S>& dy, Grads<S>& grads) {
  const auto& w = p.get(prefix + ".conv_w");
  const auto& gamma = p.get(prefix + ".bn_gamma").v;
  const auto& slope = p.get(prefix + ".prelu_a").v;

  Tensor4<S> dconv;
  std::vector<S> dslope;
  nn::prelu_backward(tr.conv_out, slope, dy, &dconv, &dslope);

  Tensor4<S> normed = recompute_normed(p, prefix, tr);
  Tensor4<S> dnormed;
  std::vector<S> dw, db;
  nn::conv2d_backward(normed, w.v, tr.out_ch, tr.conv, dconv, &dnormed, &dw, &db);

  Tensor4<S> dx;
  std::vector<S> dgamma, dbeta;
  nn::batchnorm_backward(tr.x_in, gamma, tr.bn, dnormed, &dx, &dgamma, &dbeta);

  auto accum = [&](const std::string& name, const std::vector<S>& g) {
    auto& dst = grads.g[p.index_of(name)];
    for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  };
  accum(prefix + ".conv_w", dw);
  accum(prefix + ".conv_b", db);
  accum(prefix + ".prelu_a", dslope);
  accum(prefix + ".bn_gamma", dgamma);
  accum(prefix + ".bn_beta", dbeta);
  return dx;
}

/// Fold the trace's batch statistics into the running statistics.
template <typename S>
void commit_stats(ModelParams<S>& p, const std::string& prefix, const Trace<S>& tr,
                  double momentum = kBnMomentum) {
  if (tr.bn.mode != Mode::train) return;
  auto& rmean = p.get(prefix + ".bn_rmean").v;
  auto& rvar = p.get(prefix + ".bn_rvar").v;
  for (size_t c = 0; c < rmean.size(); ++c) {
    rmean[c] = static_cast<S>(momentum * static_cast<double>(rmean[c]) +
                              (1.0 - momentum) * tr.bn.batch_mean[c]);
    rvar[c] = static_cast<S>(momentum * static_cast<double>(rvar[c]) +
                             (1.0 - momentum) * tr.bn.batch_var[c]);
  }
}

}  // namespace block
}  // namespace advseg
