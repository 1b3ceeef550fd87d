#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "advseg/params.hpp"

namespace advseg {

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment estimates, aligned with the model's tensor order.
/// Non-trainable tensors carry empty moments.
template <typename S>
struct AdamState {
  std::vector<std::vector<S>> m, v;

  template <typename P>
  static AdamState zeros_like(const ModelParams<P>& p) {
    AdamState st;
    st.m.resize(p.tensors.size());
    st.v.resize(p.tensors.size());
    for (size_t i = 0; i < p.tensors.size(); ++i)
      if (p.tensors[i].trainable) {
        st.m[i].assign(p.tensors[i].count(), S(0));
        st.v[i].assign(p.tensors[i].count(), S(0));
      }
    return st;
  }
};

/// One Adam update at step t (1-based):
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * mhat / (sqrt(vhat) + eps)
template <typename S>
void adam_step(ModelParams<S>& params, const Grads<S>& grads, AdamState<S>& state, uint64_t t,
               const AdamConfig& cfg) {
  require(t >= 1, "config", "Adam step index is 1-based");
  require(grads.g.size() == params.tensors.size() && state.m.size() == params.tensors.size(),
          "shape", "optimizer state layout mismatch");
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S corr1 = static_cast<S>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  const S corr2 = static_cast<S>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
  const S lr = static_cast<S>(cfg.learning_rate);
  const S eps = static_cast<S>(cfg.epsilon);
  for (size_t i = 0; i < params.tensors.size(); ++i) {
    auto& tensor = params.tensors[i];
    if (!tensor.trainable) continue;
    const auto& g = grads.g[i];
    require(g.size() == tensor.count(), "shape", "gradient size mismatch for " + tensor.name);
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t j = 0; j < g.size(); ++j) {
      m[j] = b1 * m[j] + (S(1) - b1) * g[j];
      v[j] = b2 * v[j] + (S(1) - b2) * g[j] * g[j];
      S mhat = m[j] / corr1;
      S vhat = v[j] / corr2;
      tensor.v[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace advseg
