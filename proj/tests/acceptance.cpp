// Acceptance suite: one binary, one printed pass/fail line per criterion.
// Exit status is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <string>
#include <vector>

#include "advseg/advseg.hpp"
#include "testutil.hpp"

using namespace advseg;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int id, const char* title, bool ok, double seconds, const std::string& detail) {
  std::printf("%s  criterion %d (%6.1fs): %s%s%s\n", ok ? "PASS" : "FAIL", id, seconds, title,
              detail.empty() ? "" : " — ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

template <typename Fn>
void criterion(int id, const char* title, const Fn& fn) {
  auto t0 = Clock::now();
  bool ok = false;
  std::string detail;
  try {
    ok = fn(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  report(id, title, ok, secs, detail);
}

// Deterministic phantom dataset shared by the training criteria.
Dataset phantom_dataset(int n_train, int n_val, int w, int h, int d, uint64_t seed) {
  Dataset ds;
  Rng rng(seed);
  for (int i = 0; i < n_train + n_val; ++i) {
    PhantomSpec spec;
    spec.width = w;
    spec.height = h;
    spec.depth = d;
    spec.organ_axes = {0.30 * w * (0.85 + 0.3 * rng.uniform()),
                       0.24 * h * (0.85 + 0.3 * rng.uniform()),
                       0.28 * d * (0.85 + 0.3 * rng.uniform())};
    spec.noise_sigma = 8.0f;
    spec.bias_amplitude = 0.1f;
    spec.seed = rng.next();
    auto [vol, mask] = make_phantom(spec);
    TrainCase tc;
    tc.name = "case_" + std::to_string(i);
    tc.normalized = normalize(vol).first;
    tc.labels = mask;
    (i < n_train ? ds.train : ds.val).push_back(std::move(tc));
  }
  return ds;
}

Volume as_raw(const Volume& normalized) {
  return normalized;  // normalized volumes re-normalize to themselves
}

double mean_val_voe(const ModelParams<float>& gen, const GeneratorConfig& gcfg,
                    const Dataset& ds) {
  double total = 0.0;
  for (const auto& c : ds.val) {
    LabelVolume pred = predict_labels(gen, gcfg, as_raw(c.normalized));
    total += volumetric_overlap_error(pred, c.labels);
  }
  return total / static_cast<double>(ds.val.size());
}

double mean_d_fake_on_val(const TrainerState& st, const Dataset& ds) {
  double sum = 0.0;
  size_t count = 0;
  for (const auto& c : ds.val) {
    for (int z0 = 0; z0 < c.normalized.depth; z0 += 8) {
      int nb = std::min(8, c.normalized.depth - z0);
      Tensor4<float> x(nb, st.gcfg.in_channels(), st.gcfg.input_h, st.gcfg.input_w);
      for (int b = 0; b < nb; ++b)
        detail::copy_group_channels(c.normalized, z0 + b, st.gcfg.k, x.plane(b, 0));
      auto fwd = generator_forward(st.gen, st.gcfg, x, Mode::infer);
      Tensor4<float> probs = nn::softmax_channels(fwd.logits);
      Tensor4<float> u = make_condition_pair(x, probs);
      auto d = discriminator_forward(st.disc, st.dcfg, u, Mode::infer);
      for (double p : d.probs) sum += p;
      count += d.probs.size();
    }
  }
  return sum / static_cast<double>(count);
}

char fmt_buf[512];
const char* fmt(const char* f, ...) {
  va_list args;
  va_start(args, f);
  std::vsnprintf(fmt_buf, sizeof(fmt_buf), f, args);
  va_end(args);
  return fmt_buf;
}

}  // namespace

// --------------------------------------------------------------------------

static bool criterion1(std::string& detail) {
  GeneratorConfig gcfg;
  gcfg.k = 0;
  gcfg.depth = 1;
  gcfg.base_channels = 2;
  gcfg.input_h = 8;
  gcfg.input_w = 8;
  auto gen = init_generator<double>(gcfg, 17);
  Rng rng(18);
  Tensor4<double> x = testutil::random_tensor(rng, 2, 1, 8, 8, 0.6);
  Tensor4<uint8_t> labels = testutil::random_labels(rng, 2, 8, 8);

  auto g_fwd = generator_forward(gen, gcfg, x, Mode::train);
  auto ce = softmax_cross_entropy(g_fwd.logits, labels);
  auto g_grads = generator_backward(gen, gcfg, g_fwd.trace, ce.dlogits);
  auto g_res = testutil::fd_check_params(
      gen, g_grads,
      [&](const ModelParams<double>& w) {
        return softmax_cross_entropy(generator_forward(w, gcfg, x, Mode::train).logits, labels)
            .loss;
      },
      1e-6);

  DiscriminatorConfig dcfg;
  dcfg.levels = 2;
  dcfg.base_channels = 2;
  dcfg.in_channels = 3;
  auto disc = init_discriminator<double>(dcfg, 19);
  Tensor4<double> u = testutil::random_tensor(rng, 2, 3, 8, 8, 0.5);
  auto d_fwd = discriminator_forward(disc, dcfg, u, Mode::train);
  auto adv = generator_adversarial_loss(d_fwd.probs);
  auto d_bwd = discriminator_backward(disc, dcfg, d_fwd.trace, adv.grad);
  auto d_res = testutil::fd_check_params(
      disc, d_bwd.grads,
      [&](const ModelParams<double>& w) {
        return generator_adversarial_loss(discriminator_forward(w, dcfg, u, Mode::train).probs)
            .value;
      },
      1e-6);

  detail = fmt("generator max rel err %.2e over %zu params; discriminator %.2e over %zu",
               g_res.max_rel_err, g_res.checked, d_res.max_rel_err, d_res.checked);
  return g_res.max_rel_err < 1e-4 && d_res.max_rel_err < 1e-4;
}

static bool criterion2(std::string& detail) {
  Tensor4<double> logits(2, 2, 4, 4);  // uniform: all zeros
  Rng rng(3);
  Tensor4<uint8_t> labels = testutil::random_labels(rng, 2, 4, 4);
  double l_cls = softmax_cross_entropy(logits, labels).loss;
  bool ok_cls = std::abs(l_cls - std::log(2.0)) < 1e-6;

  std::vector<double> half(4, 0.5);
  double l_d = discriminator_loss(half, half).value;
  double l_g = generator_adversarial_loss(half).value;
  bool ok_d = std::abs(l_d - 2.0 * std::log(0.5)) < 1e-6;
  bool ok_g = std::abs(l_g - std::log(0.5)) < 1e-6;

  bool ok_combined = combined_loss(l_cls, l_g, 0.01) == l_cls + 0.01 * (-l_g) &&
                     combined_loss(l_cls, l_g, 0.01, true) == l_cls + 0.01 * l_g &&
                     combined_loss(l_cls, 0.0, 0.01) == l_cls;

  detail = fmt("L_cls=%.8f, L_gan_d=%.8f, L_gan_g=%.8f", l_cls, l_d, l_g);
  return ok_cls && ok_d && ok_g && ok_combined;
}

static bool criterion3(std::string& detail) {
  Rng rng(42);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    LabelVolume m = testutil::random_mask(rng, 8, 8, 8, 0.15 + 0.6 * rng.uniform());
    for (auto conn : {Connectivity::d2_4, Connectivity::d2_8, Connectivity::d3_6,
                      Connectivity::d3_26}) {
      auto cl = connected_components(m, conn);
      auto oracle = testutil::flood_fill_labels(m, conn);
      if (!testutil::same_partition(cl.label, oracle)) {
        detail = fmt("mismatch on trial %d connectivity %s", trial, to_string(conn));
        return false;
      }
      ++checked;
    }
  }
  detail = fmt("%d labelings match the flood-fill oracle", checked);
  return true;
}

static bool criterion4(std::string& detail) {
  Rng rng(77);
  int compared = 0;
  while (compared < 100) {
    LabelVolume a = testutil::random_mask(rng, 6, 6, 6, 0.3);
    LabelVolume b = testutil::random_mask(rng, 6, 6, 6, 0.3);
    if (a.foreground_count() == 0 || b.foreground_count() == 0) continue;
    auto fast = symmetric_surface_distances(a, b);
    auto slow = testutil::brute_force_distances(a, b);
    std::sort(fast.begin(), fast.end());
    std::sort(slow.begin(), slow.end());
    if (fast != slow) {
      detail = fmt("distance multiset mismatch on pair %d", compared);
      return false;
    }
    ++compared;
  }

  LabelVolume a = testutil::box_mask(7, 6, 6, 1, 5, 1, 5, 1, 5);
  LabelVolume b = testutil::box_mask(7, 6, 6, 2, 6, 1, 5, 1, 5);
  double voe = volumetric_overlap_error(a, b);
  double mssd = distance_stats(symmetric_surface_distances(a, b)).mssd;
  LabelVolume small = testutil::box_mask(6, 6, 6, 1, 4, 1, 5, 1, 5);  // 48 voxels
  LabelVolume full = testutil::box_mask(6, 6, 6, 1, 5, 1, 5, 1, 5);   // 64 voxels
  double ravd = relative_absolute_volume_difference(small, full);

  detail = fmt("%d multisets exact; VOE=%.6f RAVD=%.6f MSSD=%.6f", compared, voe, ravd, mssd);
  return std::abs(voe - 40.0) < 1e-9 && std::abs(ravd - 25.0) < 1e-9 &&
         std::abs(mssd - 1.0) < 1e-9;
}

static bool criterion5(std::string& detail) {
  Rng rng(79);
  int done = 0;
  while (done < 1000) {
    LabelVolume a = testutil::random_mask(rng, 6, 6, 6, 0.1 + 0.4 * rng.uniform());
    LabelVolume b = testutil::random_mask(rng, 6, 6, 6, 0.1 + 0.4 * rng.uniform());
    if (a.foreground_count() == 0 || b.foreground_count() == 0) continue;
    DistanceStats s = distance_stats(symmetric_surface_distances(a, b));
    if (!(s.mssd >= s.rmssd - 1e-12 && s.rmssd >= s.assd - 1e-12 && s.assd >= 0.0)) {
      detail = fmt("order violated: assd=%.6f rmssd=%.6f mssd=%.6f", s.assd, s.rmssd, s.mssd);
      return false;
    }
    ++done;
  }
  LabelVolume m = testutil::box_mask(8, 8, 8, 2, 6, 2, 6, 2, 6);
  MetricReport r = evaluate_pair(m, m);
  bool identical_ok = r.voe == 0.0 && r.ravd == 0.0 && r.assd == 0.0 && r.rmssd == 0.0 &&
                      r.mssd == 0.0 && r.mean_score == 100.0 && r.score_voe == 100.0 &&
                      r.score_ravd == 100.0 && r.score_assd == 100.0 && r.score_rmssd == 100.0 &&
                      r.score_mssd == 100.0;
  detail = fmt("%d random pairs ordered; identical masks score %.1f", done, r.mean_score);
  return identical_ok;
}

static bool criterion6(std::string& detail) {
  double worst_gain = 1e9;
  for (int i = 0; i < 10; ++i) {
    PhantomSpec spec;
    spec.width = spec.height = spec.depth = 32;
    spec.organ_axes = {8.5 + 0.2 * i, 8.0, 7.0};
    spec.seed = 9000 + i;
    auto [vol, ref] = make_phantom(spec);

    LabelVolume corrupted = corrupt_prediction(ref, 5, 2, 40 + i);
    int n_before = connected_components(corrupted, Connectivity::d3_26).count();
    LabelVolume filtered = largest_component_filter_3d(corrupted);
    int n_after = connected_components(filtered, Connectivity::d3_26).count();
    if (n_before != 6 || n_after != 1) {
      detail = fmt("case %d: component count %d -> %d, expected 6 -> 1", i, n_before, n_after);
      return false;
    }
    double before = evaluate_pair(corrupted, ref).mean_score;
    double after = evaluate_pair(filtered, ref).mean_score;
    if (!(after > before)) {
      detail = fmt("case %d: score did not increase (%.3f -> %.3f)", i, before, after);
      return false;
    }
    worst_gain = std::min(worst_gain, after - before);
    if (filtered.labels != ref.labels) {
      detail = fmt("case %d: filtering did not recover the uncorrupted mask", i);
      return false;
    }
  }
  detail = fmt("10 cases despeckled to one component; smallest score gain %.3f points",
               worst_gain);
  return true;
}

static bool criterion7(std::string& detail) {
  Dataset ds = phantom_dataset(6, 2, 64, 64, 24, 31415);
  GeneratorConfig gcfg;
  gcfg.k = 1;
  gcfg.depth = 3;
  gcfg.base_channels = 8;
  gcfg.input_h = gcfg.input_w = 64;
  DiscriminatorConfig dcfg;
  dcfg.levels = 3;
  dcfg.base_channels = 8;
  TrainConfig tcfg;
  tcfg.total_iterations = 2000;
  tcfg.batch_size = 4;
  tcfg.k = 1;
  tcfg.seed = 271828;

  TrainerState init = init_trainer(gcfg, dcfg, tcfg);
  double voe0 = mean_val_voe(init.gen, init.gcfg, ds);

  TrainResult run1 = train(init_trainer(gcfg, dcfg, tcfg), ds);
  double voe1 = mean_val_voe(run1.state.gen, run1.state.gcfg, ds);
  double rel_improvement = (voe0 - voe1) / voe0;

  TrainResult run2 = train(init_trainer(gcfg, dcfg, tcfg), ds);
  bool deterministic = params_checksum(run1.state.gen) == params_checksum(run2.state.gen) &&
                       params_checksum(run1.state.disc) == params_checksum(run2.state.disc);
  for (int i = 0; i < 10 && deterministic; ++i) {
    deterministic = run1.stats[i].l_cls == run2.stats[i].l_cls &&
                    run1.stats[i].l_gan_d == run2.stats[i].l_gan_d &&
                    run1.stats[i].l_gan_g == run2.stats[i].l_gan_g &&
                    run1.stats[i].l_total == run2.stats[i].l_total;
  }

  detail = fmt("VOE %.2f%% -> %.2f%% (%.0f%% relative); determinism %s",
               voe0, voe1, 100.0 * rel_improvement, deterministic ? "exact" : "BROKEN");
  return rel_improvement >= 0.30 && deterministic;
}

static bool criterion8(std::string& detail) {
  Dataset ds = phantom_dataset(4, 2, 32, 32, 12, 141421);
  double voes[2] = {0, 0};
  for (int k = 0; k <= 1; ++k) {
    GeneratorConfig gcfg;
    gcfg.k = k;
    gcfg.depth = 2;
    gcfg.base_channels = 4;
    gcfg.input_h = gcfg.input_w = 32;
    DiscriminatorConfig dcfg;
    dcfg.levels = 2;
    dcfg.base_channels = 4;
    TrainConfig tcfg;
    tcfg.total_iterations = 120;
    tcfg.batch_size = 4;
    tcfg.k = k;
    tcfg.seed = 5;

    TrainResult r = train(init_trainer(gcfg, dcfg, tcfg), ds);
    const auto& first_conv = r.state.gen.get("enc0.b0.conv_w");
    if (first_conv.shape[1] != 2 * k + 1) {
      detail = fmt("k=%d: first layer has %d input channels, expected %d", k,
                   first_conv.shape[1], 2 * k + 1);
      return false;
    }
    if (r.state.gen.get("enc0.b0.bn_gamma").count() != static_cast<size_t>(2 * k + 1)) {
      detail = fmt("k=%d: input normalization width mismatch", k);
      return false;
    }
    voes[k] = mean_val_voe(r.state.gen, r.state.gcfg, ds);
  }
  // Non-binding report: whether the larger neighborhood helped on this run.
  detail = fmt("k=0 and k=1 trained and predicted; val VOE %.2f%% vs %.2f%% "
               "(larger context %s on this desk run; informational only)",
               voes[0], voes[1], voes[1] < voes[0] ? "helped" : "did not help");
  return true;
}

static bool criterion9(std::string& detail) {
  Dataset ds = phantom_dataset(4, 2, 64, 64, 16, 999331);
  GeneratorConfig gcfg;
  gcfg.k = 1;
  gcfg.depth = 2;
  gcfg.base_channels = 8;
  gcfg.input_h = gcfg.input_w = 64;
  DiscriminatorConfig dcfg;
  dcfg.levels = 3;
  dcfg.base_channels = 8;
  TrainConfig tcfg;
  tcfg.total_iterations = 500;
  tcfg.batch_size = 4;
  tcfg.k = 1;
  tcfg.seed = 424242;

  tcfg.literal_adversarial_sign = false;
  TrainResult nonsat = train(init_trainer(gcfg, dcfg, tcfg), ds);
  tcfg.literal_adversarial_sign = true;
  TrainResult literal = train(init_trainer(gcfg, dcfg, tcfg), ds);

  for (const auto& row : literal.stats)
    if (!std::isfinite(row.l_total)) {
      detail = "literal configuration diverged";
      return false;
    }

  double d_nonsat = mean_d_fake_on_val(nonsat.state, ds);
  double d_literal = mean_d_fake_on_val(literal.state, ds);
  detail = fmt("mean D(u_fake): non-saturating %.4f vs literal %.4f after 500 iterations",
               d_nonsat, d_literal);
  return d_nonsat > d_literal;
}

int main() {
  std::printf("advseg acceptance suite\n");
  criterion(1, "gradient correctness against central finite differences", criterion1);
  criterion(2, "loss landmark values", criterion2);
  criterion(3, "connected components match the flood-fill oracle", criterion3);
  criterion(4, "surface distances match the quadratic oracle and fixtures", criterion4);
  criterion(5, "metric order invariant and perfect-match scores", criterion5);
  criterion(6, "despeckling removes speckles and strictly raises scores", criterion6);
  criterion(7, "desk-scale training improves validation VOE deterministically", criterion7);
  criterion(8, "neighbor-slice mechanism trains for k=0 and k=1", criterion8);
  criterion(9, "sign-convention ablation favors the non-saturating objective", criterion9);
  if (g_failures == 0)
    std::printf("all criteria passed\n");
  else
    std::printf("%d criteria FAILED\n", g_failures);
  return g_failures;
}
