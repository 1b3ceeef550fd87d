#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "advseg/blocks.hpp"
#include "advseg/nn.hpp"
#include "advseg/params.hpp"
#include "advseg/rng.hpp"

namespace advseg {

/// Conditional discriminator: a stack of stride-2 norm->conv->PReLU blocks
/// over an image+mask concatenation, global average pooling, an affine head,
/// and a sigmoid. One probability per sample.
struct DiscriminatorConfig {
  int levels = 3;
  int base_channels = 8;
  int in_channels = 5;  // 2k+1 image channels + num_classes mask channels

  int level_channels(int level) const { return base_channels << level; }
  int head_channels() const { return level_channels(levels - 1); }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DiscriminatorConfig, levels, base_channels,
                                                in_channels)

inline void validate(const DiscriminatorConfig& cfg) {
  require(cfg.levels >= 1, "config", "discriminator needs at least one level");
  require(cfg.base_channels >= 1, "config", "base_channels must be >= 1");
  require(cfg.in_channels >= 1, "config", "in_channels must be >= 1");
}

/// Channel-concatenate image channels with mask probability channels, images
/// first. Mask channels must be per-pixel distributions over the classes.
template <typename S>
Tensor4<S> make_condition_pair(const Tensor4<S>& image, const Tensor4<S>& mask_probs) {
  require(image.n == mask_probs.n && image.h == mask_probs.h && image.w == mask_probs.w, "shape",
          "image/mask spatial shape mismatch");
  const size_t plane = static_cast<size_t>(mask_probs.h) * mask_probs.w;
  for (int i = 0; i < mask_probs.n; ++i)
    for (size_t j = 0; j < plane; ++j) {
      double sum = 0.0;
      for (int c = 0; c < mask_probs.c; ++c) {
        double v = mask_probs.plane(i, c)[j];
        require(v >= 0.0 && v <= 1.0, "value", "mask channels must lie in [0, 1]");
        sum += v;
      }
      require(std::abs(sum - 1.0) <= 1e-4, "value", "mask channels must sum to 1 per pixel");
    }
  return nn::concat_channels(image, mask_probs);
}

/// One-hot probability planes for a reference label batch (N, 1, H, W).
template <typename S>
Tensor4<S> onehot_masks(const Tensor4<uint8_t>& labels, int num_classes) {
  Tensor4<S> y(labels.n, num_classes, labels.h, labels.w);
  const size_t plane = static_cast<size_t>(labels.h) * labels.w;
  for (int i = 0; i < labels.n; ++i)
    for (size_t j = 0; j < plane; ++j) {
      int c = labels.plane(i, 0)[j];
      require(c >= 0 && c < num_classes, "value", "label out of range");
      y.plane(i, c)[j] = S(1);
    }
  return y;
}

namespace detail {

inline std::string disc_block_prefix(int level) { return "d" + std::to_string(level) + ".b"; }

}  // namespace detail

template <typename S>
ModelParams<S> init_discriminator(const DiscriminatorConfig& cfg, uint64_t seed) {
  validate(cfg);
  ModelParams<S> p;
  nn::ConvSpec cs{3, 3, 2, 1};
  for (int l = 0; l < cfg.levels; ++l) {
    int in = l == 0 ? cfg.in_channels : cfg.level_channels(l - 1);
    block::add_params(p, detail::disc_block_prefix(l), in, cfg.level_channels(l), cs);
  }
  p.add("head.fc_w", {cfg.head_channels()}, true);
  p.add("head.fc_b", {1}, true);

  Rng rng = Rng(seed).fork("discriminator-init");
  for (int l = 0; l < cfg.levels; ++l) block::init_params(p, detail::disc_block_prefix(l), rng);
  auto& fw = p.get("head.fc_w");
  const double stddev = std::sqrt(2.0 / cfg.head_channels());
  for (S& x : fw.v) x = static_cast<S>(stddev * rng.normal());
  return p;
}

template <typename S>
struct DiscTrace {
  Mode mode = Mode::train;
  std::vector<std::pair<std::string, block::Trace<S>>> blocks;
  Tensor4<S> gap_in;   // last block output, fed to global average pooling
  Tensor4<S> gap_out;  // (N, C, 1, 1)
  std::vector<double> logits;
};

template <typename S>
struct DiscForward {
  std::vector<double> probs;  // strictly inside (0, 1); double keeps the
                              // log-losses finite even when S is float
  DiscTrace<S> trace;
};

template <typename S>
DiscForward<S> discriminator_forward(const ModelParams<S>& p, const DiscriminatorConfig& cfg,
                                     const Tensor4<S>& u, Mode mode) {
  validate(cfg);
  require(u.c == cfg.in_channels, "shape",
          "conditioned input has " + std::to_string(u.c) + " channels, config wants " +
              std::to_string(cfg.in_channels));
  const int div = 1 << cfg.levels;
  require(u.h % div == 0 && u.w % div == 0, "shape",
          "input spatial size must be divisible by 2^levels");

  nn::ConvSpec cs{3, 3, 2, 1};
  DiscForward<S> out;
  DiscTrace<S>& tr = out.trace;
  tr.mode = mode;
  Tensor4<S> cur = u;
  for (int l = 0; l < cfg.levels; ++l) {
    block::Trace<S> bt;
    cur = block::forward(p, detail::disc_block_prefix(l), cur, cs, mode, &bt);
    tr.blocks.emplace_back(detail::disc_block_prefix(l), std::move(bt));
  }
  tr.gap_in = cur;
  tr.gap_out = nn::global_avg_pool_forward(cur);

  const auto& w = p.get("head.fc_w").v;
  const auto& b = p.get("head.fc_b").v;
  out.probs.resize(u.n);
  tr.logits.resize(u.n);
  for (int i = 0; i < u.n; ++i) {
    double z = static_cast<double>(b[0]);
    for (int c = 0; c < cfg.head_channels(); ++c)
      z += static_cast<double>(w[c]) * static_cast<double>(tr.gap_out.at(i, c, 0, 0));
    tr.logits[i] = z;
    out.probs[i] = 1.0 / (1.0 + std::exp(-z));
  }
  return out;
}

template <typename S>
void commit_running_stats(ModelParams<S>& p, const DiscTrace<S>& trace) {
  if (trace.mode != Mode::train) return;
  for (const auto& [prefix, bt] : trace.blocks) block::commit_stats(p, prefix, bt);
}

template <typename S>
struct DiscBackward {
  Grads<S> grads;
  Tensor4<S> dinput;
};

/// Backward from dLoss/dprob per sample down to parameters and the
/// conditioned input (so adversarial gradients can reach the generator
/// through the mask channels).
template <typename S>
DiscBackward<S> discriminator_backward(const ModelParams<S>& p, const DiscriminatorConfig& cfg,
                                       const DiscTrace<S>& tr, const std::vector<double>& dprobs) {
  require(tr.mode == Mode::train, "config", "backward requires a train-mode trace");
  require(dprobs.size() == tr.logits.size(), "shape", "dprobs size mismatch");
  DiscBackward<S> out;
  out.grads = Grads<S>::template zeros_like<S>(p);

  const int n = static_cast<int>(dprobs.size());
  const int hc = cfg.head_channels();
  const auto& w = p.get("head.fc_w").v;
  Tensor4<S> dgap(n, hc, 1, 1);
  auto& gw = out.grads.g[p.index_of("head.fc_w")];
  auto& gb = out.grads.g[p.index_of("head.fc_b")];
  for (int i = 0; i < n; ++i) {
    double prob = 1.0 / (1.0 + std::exp(-tr.logits[i]));
    double dz = dprobs[i] * prob * (1.0 - prob);
    gb[0] += static_cast<S>(dz);
    for (int c = 0; c < hc; ++c) {
      gw[c] += static_cast<S>(dz * static_cast<double>(tr.gap_out.at(i, c, 0, 0)));
      dgap.at(i, c, 0, 0) = static_cast<S>(dz * static_cast<double>(w[c]));
    }
  }

  Tensor4<S> dcur = nn::global_avg_pool_backward(dgap, tr.gap_in.h, tr.gap_in.w);
  for (int l = cfg.levels - 1; l >= 0; --l) {
    const auto& prefix = tr.blocks[l].first;
    dcur = block::backward(p, prefix, tr.blocks[l].second, dcur, out.grads);
  }
  out.dinput = std::move(dcur);
  return out;
}

struct LossWithGrad {
  double value = 0.0;
  std::vector<double> grad;  // dValue/dprob per sample
};

/// Mean log d_real + mean log(1 - d_fake): the discriminator's objective,
/// which it maximizes. Gradients are of this value.
struct DiscriminatorLoss {
  double value = 0.0;
  std::vector<double> d_real_grad, d_fake_grad;
};

inline DiscriminatorLoss discriminator_loss(const std::vector<double>& d_real,
                                            const std::vector<double>& d_fake) {
  require(!d_real.empty() && d_real.size() == d_fake.size(), "shape",
          "real/fake batches must be nonempty and equal-sized");
  const double n = static_cast<double>(d_real.size());
  DiscriminatorLoss out;
  out.d_real_grad.resize(d_real.size());
  out.d_fake_grad.resize(d_fake.size());
  for (size_t i = 0; i < d_real.size(); ++i) {
    require(d_real[i] > 0.0 && d_real[i] < 1.0 && d_fake[i] > 0.0 && d_fake[i] < 1.0, "value",
            "probabilities must lie strictly inside (0, 1)");
    out.value += std::log(d_real[i]) / n + std::log(1.0 - d_fake[i]) / n;
    out.d_real_grad[i] = 1.0 / (n * d_real[i]);
    out.d_fake_grad[i] = -1.0 / (n * (1.0 - d_fake[i]));
  }
  return out;
}

/// Mean log d_fake: the generator's adversarial objective, which it
/// maximizes. The trainer minimizes the negation by default.
inline LossWithGrad generator_adversarial_loss(const std::vector<double>& d_fake) {
  require(!d_fake.empty(), "shape", "empty batch");
  const double n = static_cast<double>(d_fake.size());
  LossWithGrad out;
  out.grad.resize(d_fake.size());
  for (size_t i = 0; i < d_fake.size(); ++i) {
    require(d_fake[i] > 0.0 && d_fake[i] < 1.0, "value",
            "probabilities must lie strictly inside (0, 1)");
    out.value += std::log(d_fake[i]) / n;
    out.grad[i] = 1.0 / (n * d_fake[i]);
  }
  return out;
}

}  // namespace advseg
