#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "advseg/adam.hpp"
#include "advseg/adversary.hpp"
#include "advseg/core.hpp"
#include "advseg/rng.hpp"
#include "advseg/segnet.hpp"
#include "advseg/volume.hpp"

namespace advseg {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdamHyper, beta1, beta2, epsilon)

struct TrainConfig {
  double learning_rate = 0.001;
  int total_iterations = 2000;
  double adversarial_weight = 0.01;  // lambda in the combined objective
  int batch_size = 4;
  int k = 1;
  uint64_t seed = 1;
  AdamHyper adam;
  int checkpoint_interval = 500;
  // When set, the combined objective adds +lambda * mean log D(u_fake)
  // instead of the default non-saturating -lambda * mean log D(u_fake).
  bool literal_adversarial_sign = false;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, learning_rate, total_iterations,
                                                adversarial_weight, batch_size, k, seed, adam,
                                                checkpoint_interval, literal_adversarial_sign)

inline void validate(const TrainConfig& cfg) {
  require(cfg.learning_rate > 0.0, "config", "learning_rate must be > 0");
  require(cfg.adversarial_weight >= 0.0, "config", "adversarial_weight must be >= 0");
  require(cfg.total_iterations >= 1, "config", "total_iterations must be >= 1");
  require(cfg.batch_size >= 1, "config", "batch_size must be >= 1");
  require(cfg.k >= 0, "config", "k must be >= 0");
  require(cfg.checkpoint_interval >= 1, "config", "checkpoint_interval must be >= 1");
}

/// The minimized objective: classification loss plus the weighted adversarial
/// surrogate. The generator maximizes mean log D(u_fake), so the default
/// surrogate is its negation; the literal flag flips the sign for ablation.
inline double combined_loss(double l_cls, double l_gan_g, double lambda,
                            bool literal_sign = false) {
  require(std::isfinite(l_cls) && std::isfinite(l_gan_g), "value", "non-finite loss input");
  return l_cls + lambda * (literal_sign ? l_gan_g : -l_gan_g);
}

struct StatsRow {
  int iter = 0;
  double l_cls = 0.0, l_gan_d = 0.0, l_gan_g = 0.0, l_total = 0.0;
  double ms = 0.0;
};

inline const char* stats_csv_header() { return "iter,l_cls,l_gan_d,l_gan_g,l_total,ms"; }

inline std::string to_csv(const StatsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.3f", r.iter, r.l_cls, r.l_gan_d,
                r.l_gan_g, r.l_total, r.ms);
  return buf;
}

struct TrainCase {
  std::string name;
  Volume normalized;
  LabelVolume labels;
};

struct Dataset {
  std::vector<TrainCase> train, val;
};

/// Manifest JSON: {"cases": [{"volume": ..., "labels": ..., "split":
/// "train"|"val"}, ...]} with paths relative to the manifest's directory.
inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  auto bytes = detail::read_all(manifest_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail("format", "bad manifest " + manifest_path.string() + ": " + e.what());
  }
  require(j.contains("cases") && j["cases"].is_array() && !j["cases"].empty(), "format",
          "manifest has no cases");
  Dataset ds;
  const auto dir = manifest_path.parent_path();
  for (const auto& c : j["cases"]) {
    TrainCase tc;
    auto vol_path = dir / c["volume"].get<std::string>();
    tc.name = std::filesystem::path(c["volume"].get<std::string>()).stem().string();
    Volume raw = load_volume(vol_path);
    tc.labels = load_labels(dir / c["labels"].get<std::string>());
    require(raw.width == tc.labels.width && raw.height == tc.labels.height &&
                raw.depth == tc.labels.depth,
            "shape", "volume/labels dimensions differ for " + tc.name);
    tc.normalized = normalize(raw).first;
    std::string split = c["split"].get<std::string>();
    if (split == "val")
      ds.val.push_back(std::move(tc));
    else
      ds.train.push_back(std::move(tc));
  }
  require(!ds.train.empty(), "config", "manifest has no training cases");
  return ds;
}

namespace detail {

/// Copy the 2k+1 clamped neighbor slices of slice i into dst (channel-major).
/// The volume must already be validated and normalized.
inline void copy_group_channels(const Volume& v, int i, int k, float* dst) {
  for (int c = 0; c < 2 * k + 1; ++c) {
    int z = std::clamp(i - k + c, 0, v.depth - 1);
    std::copy_n(v.slice(z), v.slice_size(), dst + static_cast<size_t>(c) * v.slice_size());
  }
}

}  // namespace detail

/// Complete deterministic training state: everything needed for bit-exact
/// resume lives here.
struct TrainerState {
  GeneratorConfig gcfg;
  DiscriminatorConfig dcfg;
  TrainConfig tcfg;
  ModelParams<float> gen, disc;
  AdamState<float> gen_adam, disc_adam;
  uint64_t batch_rng_state = 0;
  int iteration = 0;  // completed iterations
};

inline TrainerState init_trainer(GeneratorConfig gcfg, DiscriminatorConfig dcfg,
                                 TrainConfig tcfg) {
  validate(tcfg);
  gcfg.k = tcfg.k;
  dcfg.in_channels = gcfg.in_channels() + gcfg.num_classes;
  validate(gcfg);
  validate(dcfg);
  TrainerState st;
  st.gcfg = gcfg;
  st.dcfg = dcfg;
  st.tcfg = tcfg;
  st.gen = init_generator<float>(gcfg, tcfg.seed);
  st.disc = init_discriminator<float>(dcfg, tcfg.seed);
  st.gen_adam = AdamState<float>::zeros_like(st.gen);
  st.disc_adam = AdamState<float>::zeros_like(st.disc);
  st.batch_rng_state = Rng(tcfg.seed).fork("batch-sampling").state();
  return st;
}

namespace detail {

inline void check_dataset(const TrainerState& st, const Dataset& ds) {
  for (const auto* group : {&ds.train, &ds.val})
    for (const auto& c : *group) {
      require(c.normalized.width == st.gcfg.input_w && c.normalized.height == st.gcfg.input_h,
              "config", "case " + c.name + " is " + std::to_string(c.normalized.width) + "x" +
                            std::to_string(c.normalized.height) + " but the generator expects " +
                            std::to_string(st.gcfg.input_w) + "x" + std::to_string(st.gcfg.input_h));
    }
}

}  // namespace detail

/// One alternating iteration: a discriminator Adam step on (real, fake)
/// condition pairs, then a generator Adam step on classification loss plus
/// the weighted adversarial surrogate flowing back through the frozen
/// discriminator.
inline StatsRow train_iteration(TrainerState& st, const Dataset& ds) {
  const auto t_start = std::chrono::steady_clock::now();
  const TrainConfig& cfg = st.tcfg;
  const int B = cfg.batch_size;
  const int H = st.gcfg.input_h, W = st.gcfg.input_w;

  // Assemble the batch for this iteration.
  Rng rng(0);
  rng.set_state(st.batch_rng_state);
  size_t pool = 0;
  for (const auto& c : ds.train) pool += static_cast<size_t>(c.normalized.depth);
  Tensor4<float> x(B, st.gcfg.in_channels(), H, W);
  Tensor4<uint8_t> y(B, 1, H, W);
  for (int b = 0; b < B; ++b) {
    size_t pick = rng.below(pool);
    size_t case_idx = 0;
    while (pick >= static_cast<size_t>(ds.train[case_idx].normalized.depth)) {
      pick -= static_cast<size_t>(ds.train[case_idx].normalized.depth);
      ++case_idx;
    }
    const auto& c = ds.train[case_idx];
    detail::copy_group_channels(c.normalized, static_cast<int>(pick), cfg.k, x.plane(b, 0));
    std::copy_n(c.labels.slice(static_cast<int>(pick)), c.labels.slice_size(), y.plane(b, 0));
  }
  st.batch_rng_state = rng.state();

  const uint64_t t = static_cast<uint64_t>(st.iteration) + 1;
  AdamConfig adam{cfg.learning_rate, cfg.adam.beta1, cfg.adam.beta2, cfg.adam.epsilon};

  // Generator forward once; its prediction serves both steps.
  auto g_fwd = generator_forward(st.gen, st.gcfg, x, Mode::train);
  commit_running_stats(st.gen, g_fwd.trace);
  Tensor4<float> probs = nn::softmax_channels(g_fwd.logits);

  // (1) Discriminator step: maximize Eq-style log d_real + log(1 - d_fake),
  // i.e. minimize the negation.
  Tensor4<float> u_real = make_condition_pair(x, onehot_masks<float>(y, st.gcfg.num_classes));
  Tensor4<float> u_fake = make_condition_pair(x, probs);
  auto d_real_fwd = discriminator_forward(st.disc, st.dcfg, u_real, Mode::train);
  commit_running_stats(st.disc, d_real_fwd.trace);
  auto d_fake_fwd = discriminator_forward(st.disc, st.dcfg, u_fake, Mode::train);
  commit_running_stats(st.disc, d_fake_fwd.trace);
  DiscriminatorLoss d_loss = discriminator_loss(d_real_fwd.probs, d_fake_fwd.probs);
  std::vector<double> neg_real(d_loss.d_real_grad.size()), neg_fake(d_loss.d_fake_grad.size());
  for (size_t i = 0; i < neg_real.size(); ++i) neg_real[i] = -d_loss.d_real_grad[i];
  for (size_t i = 0; i < neg_fake.size(); ++i) neg_fake[i] = -d_loss.d_fake_grad[i];
  auto d_bwd_real = discriminator_backward(st.disc, st.dcfg, d_real_fwd.trace, neg_real);
  auto d_bwd_fake = discriminator_backward(st.disc, st.dcfg, d_fake_fwd.trace, neg_fake);
  d_bwd_real.grads.accumulate(d_bwd_fake.grads);
  adam_step(st.disc, d_bwd_real.grads, st.disc_adam, t, adam);

  // (2) Generator step against the updated, frozen discriminator.
  auto ce = softmax_cross_entropy(g_fwd.logits, y);
  Tensor4<float> dlogits = ce.dlogits;
  auto d_fake2 = discriminator_forward(st.disc, st.dcfg, u_fake, Mode::train);
  LossWithGrad adv = generator_adversarial_loss(d_fake2.probs);
  if (cfg.adversarial_weight > 0.0) {
    const double scale =
        cfg.literal_adversarial_sign ? cfg.adversarial_weight : -cfg.adversarial_weight;
    std::vector<double> dprobs(adv.grad.size());
    for (size_t i = 0; i < dprobs.size(); ++i) dprobs[i] = scale * adv.grad[i];
    auto d_bwd = discriminator_backward(st.disc, st.dcfg, d_fake2.trace, dprobs);
    Tensor4<float> dimage, dmask;
    nn::split_channels(d_bwd.dinput, st.gcfg.in_channels(), &dimage, &dmask);
    Tensor4<float> dadv_logits = nn::softmax_backward(probs, dmask);
    for (size_t i = 0; i < dlogits.v.size(); ++i) dlogits.v[i] += dadv_logits.v[i];
  }
  auto g_grads = generator_backward(st.gen, st.gcfg, g_fwd.trace, dlogits);
  adam_step(st.gen, g_grads, st.gen_adam, t, adam);

  ++st.iteration;
  StatsRow row;
  row.iter = st.iteration;
  row.l_cls = ce.loss;
  row.l_gan_d = d_loss.value;
  row.l_gan_g = adv.value;
  row.l_total = combined_loss(ce.loss, adv.value, cfg.adversarial_weight,
                              cfg.literal_adversarial_sign);
  require(std::isfinite(row.l_cls) && std::isfinite(row.l_gan_d) && std::isfinite(row.l_gan_g) &&
              std::isfinite(row.l_total),
          "diverged", "non-finite loss at iteration " + std::to_string(row.iter));
  row.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start)
               .count();
  return row;
}

/// Resumable checkpoint: model tensors, optimizer moments, sampler state.
inline void save_train_checkpoint(const TrainerState& st, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json gmeta{{"generator", st.gcfg}, {"k", st.tcfg.k}};
  save_checkpoint(st.gen, gmeta, dir / "generator.json");
  save_checkpoint(st.disc, nlohmann::json{{"discriminator", st.dcfg}}, dir / "discriminator.json");

  auto moments_to_params = [](const ModelParams<float>& model, const AdamState<float>& adam) {
    ModelParams<float> out;
    for (size_t i = 0; i < model.tensors.size(); ++i) {
      const auto& t = model.tensors[i];
      if (!t.trainable) continue;
      auto& m = out.add(t.name + "#m", t.shape, true);
      m.v = adam.m[i];
      auto& v = out.add(t.name + "#v", t.shape, true);
      v.v = adam.v[i];
    }
    return out;
  };
  save_checkpoint(moments_to_params(st.gen, st.gen_adam), nlohmann::json::object(),
                  dir / "optimizer_g.json");
  save_checkpoint(moments_to_params(st.disc, st.disc_adam), nlohmann::json::object(),
                  dir / "optimizer_d.json");

  nlohmann::json state{{"iteration", st.iteration},
                       {"batch_rng_state", st.batch_rng_state},
                       {"train", st.tcfg},
                       {"generator", st.gcfg},
                       {"discriminator", st.dcfg}};
  std::string text = state.dump(2);
  text.push_back('\n');
  detail::write_all(dir / "state.json", text.data(), text.size());
}

inline TrainerState load_train_checkpoint(const std::filesystem::path& dir) {
  auto bytes = detail::read_all(dir / "state.json");
  nlohmann::json j = nlohmann::json::parse(bytes.begin(), bytes.end());
  TrainerState st;
  st.tcfg = j["train"].get<TrainConfig>();
  st.gcfg = j["generator"].get<GeneratorConfig>();
  st.dcfg = j["discriminator"].get<DiscriminatorConfig>();
  st.iteration = j["iteration"].get<int>();
  st.batch_rng_state = j["batch_rng_state"].get<uint64_t>();
  st.gen = load_checkpoint<float>(dir / "generator.json").first;
  st.disc = load_checkpoint<float>(dir / "discriminator.json").first;

  auto moments_from_params = [](const ModelParams<float>& model, const ModelParams<float>& saved) {
    AdamState<float> adam = AdamState<float>::zeros_like(model);
    for (size_t i = 0; i < model.tensors.size(); ++i) {
      const auto& t = model.tensors[i];
      if (!t.trainable) continue;
      adam.m[i] = saved.get(t.name + "#m").v;
      adam.v[i] = saved.get(t.name + "#v").v;
    }
    return adam;
  };
  st.gen_adam = moments_from_params(st.gen, load_checkpoint<float>(dir / "optimizer_g.json").first);
  st.disc_adam =
      moments_from_params(st.disc, load_checkpoint<float>(dir / "optimizer_d.json").first);
  return st;
}

struct TrainResult {
  TrainerState state;
  std::vector<StatsRow> stats;  // rows produced by this run segment
};

/// Run (or continue) training against an in-memory dataset. Writes nothing;
/// the CLI layers file output on top.
inline TrainResult train(TrainerState st, const Dataset& ds,
                         const std::function<void(const TrainerState&, const StatsRow&)>&
                             on_iteration = nullptr) {
  detail::check_dataset(st, ds);
  TrainResult out;
  while (st.iteration < st.tcfg.total_iterations) {
    StatsRow row = train_iteration(st, ds);
    if (on_iteration) on_iteration(st, row);
    out.stats.push_back(row);
  }
  out.state = std::move(st);
  return out;
}

}  // namespace advseg
