#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "advseg/blocks.hpp"
#include "advseg/nn.hpp"
#include "advseg/params.hpp"
#include "advseg/rng.hpp"
#include "advseg/volume.hpp"

namespace advseg {

/// Encoder-decoder segmentation network. Each level halves the spatial size
/// with a 2x2 max pool and doubles the channel width; the decoder mirrors it
/// with nearest-neighbor upsampling and channel-concatenated skips. Every
/// block is normalization -> 3x3 convolution -> PReLU; a final 1x1
/// convolution produces per-pixel class scores.
struct GeneratorConfig {
  int k = 1;              // input channels = 2k+1 neighbor slices
  int depth = 3;          // down/up-sampling levels
  int base_channels = 8;  // channel width at the first level
  int num_classes = 2;
  int input_h = 64, input_w = 64;

  int in_channels() const { return 2 * k + 1; }
  int level_channels(int level) const { return base_channels << level; }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GeneratorConfig, k, depth, base_channels,
                                                num_classes, input_h, input_w)

inline void validate(const GeneratorConfig& cfg) {
  require(cfg.k >= 0, "config", "k must be >= 0");
  require(cfg.depth >= 1, "config", "depth must be >= 1");
  require(cfg.base_channels >= 1, "config", "base_channels must be >= 1");
  require(cfg.num_classes == 2, "config", "only binary segmentation is supported");
  const int div = 1 << cfg.depth;
  require(cfg.input_h % div == 0 && cfg.input_w % div == 0, "config",
          "input size must be divisible by 2^depth");
}

namespace detail {

/// Block prefixes and channel plan, in forward order.
struct GenBlockPlan {
  std::string prefix;
  int in_ch, out_ch;
};

inline std::vector<GenBlockPlan> generator_blocks(const GeneratorConfig& cfg) {
  std::vector<GenBlockPlan> plan;
  for (int l = 0; l < cfg.depth; ++l) {
    int in = l == 0 ? cfg.in_channels() : cfg.level_channels(l - 1);
    int out = cfg.level_channels(l);
    plan.push_back({"enc" + std::to_string(l) + ".b0", in, out});
    plan.push_back({"enc" + std::to_string(l) + ".b1", out, out});
  }
  plan.push_back({"bott.b0", cfg.level_channels(cfg.depth - 1), cfg.level_channels(cfg.depth)});
  plan.push_back({"bott.b1", cfg.level_channels(cfg.depth), cfg.level_channels(cfg.depth)});
  for (int l = cfg.depth - 1; l >= 0; --l) {
    int ch = cfg.level_channels(l);
    plan.push_back({"dec" + std::to_string(l) + ".up", cfg.level_channels(l + 1), ch});
    plan.push_back({"dec" + std::to_string(l) + ".b0", 2 * ch, ch});
    plan.push_back({"dec" + std::to_string(l) + ".b1", ch, ch});
  }
  return plan;
}

}  // namespace detail

template <typename S>
ModelParams<S> init_generator(const GeneratorConfig& cfg, uint64_t seed) {
  validate(cfg);
  ModelParams<S> p;
  nn::ConvSpec cs3{3, 3, 1, 1};
  for (const auto& b : detail::generator_blocks(cfg))
    block::add_params(p, b.prefix, b.in_ch, b.out_ch, cs3);
  p.add("final.conv_w", {cfg.num_classes, cfg.base_channels, 1, 1}, true);
  p.add("final.conv_b", {cfg.num_classes}, true);

  Rng rng = Rng(seed).fork("generator-init");
  for (const auto& b : detail::generator_blocks(cfg)) block::init_params(p, b.prefix, rng);
  auto& fw = p.get("final.conv_w");
  const double stddev = std::sqrt(2.0 / cfg.base_channels);
  for (S& x : fw.v) x = static_cast<S>(stddev * rng.normal());
  return p;
}

template <typename S>
struct GenTrace {
  Mode mode = Mode::train;
  std::vector<std::pair<std::string, block::Trace<S>>> blocks;  // forward order
  std::vector<std::vector<int32_t>> pool_argmax;                // per encoder level
  std::vector<std::pair<int, int>> pool_in_size;                // (h, w) per encoder level
  Tensor4<S> final_in;
};

template <typename S>
struct GenForward {
  Tensor4<S> logits;
  GenTrace<S> trace;
};

namespace detail {

template <typename S>
const block::Trace<S>& find_trace(const GenTrace<S>& tr, const std::string& prefix) {
  for (const auto& [name, t] : tr.blocks)
    if (name == prefix) return t;
  fail("config", "missing trace for block " + prefix);
}

}  // namespace detail

/// Pure forward pass. Running statistics are read, never written; train mode
/// records the batch statistics in the trace so a caller can commit them with
/// commit_running_stats.
template <typename S>
GenForward<S> generator_forward(const ModelParams<S>& p, const GeneratorConfig& cfg,
                                const Tensor4<S>& x, Mode mode) {
  validate(cfg);
  require(x.c == cfg.in_channels(), "shape",
          "input has " + std::to_string(x.c) + " channels, config wants " +
              std::to_string(cfg.in_channels()));
  const int div = 1 << cfg.depth;
  require(x.h % div == 0 && x.w % div == 0, "shape",
          "input spatial size must be divisible by 2^depth");

  nn::ConvSpec cs3{3, 3, 1, 1};
  GenForward<S> out;
  GenTrace<S>& tr = out.trace;
  tr.mode = mode;

  auto run_block = [&](const std::string& prefix, const Tensor4<S>& in) {
    block::Trace<S> bt;
    Tensor4<S> y = block::forward(p, prefix, in, cs3, mode, &bt);
    tr.blocks.emplace_back(prefix, std::move(bt));
    return y;
  };

  Tensor4<S> cur = x;
  std::vector<Tensor4<S>> skips;
  for (int l = 0; l < cfg.depth; ++l) {
    cur = run_block("enc" + std::to_string(l) + ".b0", cur);
    cur = run_block("enc" + std::to_string(l) + ".b1", cur);
    skips.push_back(cur);
    tr.pool_in_size.emplace_back(cur.h, cur.w);
    std::vector<int32_t> argmax;
    cur = nn::maxpool2_forward(cur, &argmax);
    tr.pool_argmax.push_back(std::move(argmax));
  }
  cur = run_block("bott.b0", cur);
  cur = run_block("bott.b1", cur);
  for (int l = cfg.depth - 1; l >= 0; --l) {
    cur = nn::upsample2_forward(cur);
    cur = run_block("dec" + std::to_string(l) + ".up", cur);
    cur = nn::concat_channels(cur, skips[l]);
    cur = run_block("dec" + std::to_string(l) + ".b0", cur);
    cur = run_block("dec" + std::to_string(l) + ".b1", cur);
  }
  tr.final_in = cur;
  out.logits = nn::conv2d_forward(cur, p.get("final.conv_w").v, p.get("final.conv_b").v,
                                  cfg.num_classes, nn::ConvSpec{1, 1, 1, 0});
  return out;
}

/// Apply the pending running-statistic updates of a train-mode trace.
/// Infer-mode traces are a no-op.
template <typename S>
void commit_running_stats(ModelParams<S>& p, const GenTrace<S>& trace) {
  if (trace.mode != Mode::train) return;
  for (const auto& [prefix, bt] : trace.blocks) block::commit_stats(p, prefix, bt);
}

/// Gradient of a scalar loss with respect to every trainable parameter,
/// given dLoss/dlogits and the matching train-mode forward trace.
template <typename S>
Grads<S> generator_backward(const ModelParams<S>& p, const GeneratorConfig& cfg,
                            const GenTrace<S>& tr, const Tensor4<S>& dlogits) {
  require(tr.mode == Mode::train, "config", "backward requires a train-mode trace");
  Grads<S> grads = Grads<S>::template zeros_like<S>(p);

  // Final 1x1 convolution.
  const auto& fw = p.get("final.conv_w");
  Tensor4<S> dcur;
  {
    std::vector<S> dw, db;
    nn::conv2d_backward(tr.final_in, fw.v, cfg.num_classes, nn::ConvSpec{1, 1, 1, 0}, dlogits,
                        &dcur, &dw, &db);
    auto& gw = grads.g[p.index_of("final.conv_w")];
    for (size_t i = 0; i < dw.size(); ++i) gw[i] += dw[i];
    auto& gb = grads.g[p.index_of("final.conv_b")];
    for (size_t i = 0; i < db.size(); ++i) gb[i] += db[i];
  }

  std::vector<Tensor4<S>> dskips(cfg.depth);
  for (int l = 0; l < cfg.depth; ++l) {
    const std::string base = "dec" + std::to_string(l);
    dcur = block::backward(p, base + ".b1", detail::find_trace(tr, base + ".b1"), dcur, grads);
    dcur = block::backward(p, base + ".b0", detail::find_trace(tr, base + ".b0"), dcur, grads);
    Tensor4<S> dup_part;
    nn::split_channels(dcur, cfg.level_channels(l), &dup_part, &dskips[l]);
    Tensor4<S> dup =
        block::backward(p, base + ".up", detail::find_trace(tr, base + ".up"), dup_part, grads);
    dcur = nn::upsample2_backward(dup);
  }

  dcur = block::backward(p, "bott.b1", detail::find_trace(tr, "bott.b1"), dcur, grads);
  dcur = block::backward(p, "bott.b0", detail::find_trace(tr, "bott.b0"), dcur, grads);

  for (int l = cfg.depth - 1; l >= 0; --l) {
    auto [in_h, in_w] = tr.pool_in_size[l];
    Tensor4<S> dskip_total = nn::maxpool2_backward(dcur, in_h, in_w, tr.pool_argmax[l]);
    for (size_t i = 0; i < dskip_total.v.size(); ++i) dskip_total.v[i] += dskips[l].v[i];
    const std::string base = "enc" + std::to_string(l);
    dcur = block::backward(p, base + ".b1", detail::find_trace(tr, base + ".b1"), dskip_total, grads);
    dcur = block::backward(p, base + ".b0", detail::find_trace(tr, base + ".b0"), dcur, grads);
  }
  return grads;
}

/// Softmax cross entropy averaged over all pixels, with dLoss/dlogits.
/// Labels are (N, 1, H, W) with values in [0, num_classes).
template <typename S>
struct CeResult {
  double loss = 0.0;
  Tensor4<S> dlogits;
};

template <typename S>
CeResult<S> softmax_cross_entropy(const Tensor4<S>& logits, const Tensor4<uint8_t>& labels) {
  require(labels.n == logits.n && labels.c == 1 && labels.h == logits.h && labels.w == logits.w,
          "shape", "label batch shape mismatch");
  const size_t plane = static_cast<size_t>(logits.h) * logits.w;
  const double n_pixels = static_cast<double>(logits.n) * plane;
  CeResult<S> out;
  out.dlogits = Tensor4<S>(logits.n, logits.c, logits.h, logits.w);
  double loss = 0.0;
  std::vector<double> z(logits.c);
  for (int i = 0; i < logits.n; ++i)
    for (size_t j = 0; j < plane; ++j) {
      int y = labels.plane(i, 0)[j];
      require(y >= 0 && y < logits.c, "value", "label out of range");
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < logits.c; ++c) mx = std::max(mx, static_cast<double>(logits.plane(i, c)[j]));
      double denom = 0.0;
      for (int c = 0; c < logits.c; ++c) {
        z[c] = std::exp(static_cast<double>(logits.plane(i, c)[j]) - mx);
        denom += z[c];
      }
      loss -= std::log(z[y] / denom);
      for (int c = 0; c < logits.c; ++c) {
        double p = z[c] / denom;
        double onehot = (c == y) ? 1.0 : 0.0;
        out.dlogits.plane(i, c)[j] = static_cast<S>((p - onehot) / n_pixels);
      }
    }
  out.loss = loss / n_pixels;
  return out;
}

/// Assemble a network input batch from slice groups.
template <typename S>
Tensor4<S> batch_from_groups(const std::vector<SliceGroup>& groups) {
  require(!groups.empty(), "shape", "empty slice-group batch");
  const auto& g0 = groups.front();
  Tensor4<S> x(static_cast<int>(groups.size()), g0.channel_count(), g0.height, g0.width);
  for (size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    require(g.k == g0.k && g.width == g0.width && g.height == g0.height, "shape",
            "inconsistent slice groups in batch");
    std::copy(g.channels.begin(), g.channels.end(), x.plane(static_cast<int>(i), 0));
  }
  return x;
}

}  // namespace advseg
