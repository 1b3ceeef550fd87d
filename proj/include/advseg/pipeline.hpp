#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "advseg/despeckle.hpp"
#include "advseg/phantom.hpp"
#include "advseg/segnet.hpp"
#include "advseg/surfmetrics.hpp"
#include "advseg/trainer.hpp"
#include "advseg/volume.hpp"

namespace advseg {

/// Run the generator in infer mode over every slice group of a volume and
/// stack the per-pixel argmax decisions into a mask. Ties go to background.
inline LabelVolume predict_labels(const ModelParams<float>& gen, const GeneratorConfig& gcfg,
                                  const Volume& raw, int slice_batch = 8) {
  validate(gcfg);
  validate(raw);
  const int div = 1 << gcfg.depth;
  require(raw.height % div == 0 && raw.width % div == 0, "shape",
          "volume is " + std::to_string(raw.width) + "x" + std::to_string(raw.height) +
              " in-plane but the network downsamples " + std::to_string(gcfg.depth) +
              " times; pad the volume to a multiple of " + std::to_string(div) +
              " (no implicit resize is performed)");
  Volume vhat = normalize(raw).first;

  LabelVolume out;
  out.width = raw.width;
  out.height = raw.height;
  out.depth = raw.depth;
  out.spacing = raw.spacing;
  out.labels.assign(out.voxel_count(), 0);

  const size_t plane = vhat.slice_size();
  for (int z0 = 0; z0 < raw.depth; z0 += slice_batch) {
    const int nb = std::min(slice_batch, raw.depth - z0);
    Tensor4<float> x(nb, gcfg.in_channels(), raw.height, raw.width);
    for (int b = 0; b < nb; ++b)
      detail::copy_group_channels(vhat, z0 + b, gcfg.k, x.plane(b, 0));
    auto fwd = generator_forward(gen, gcfg, x, Mode::infer);
    for (int b = 0; b < nb; ++b) {
      const float* bg = fwd.logits.plane(b, 0);
      const float* fg = fwd.logits.plane(b, 1);
      uint8_t* dst = out.slice(z0 + b);
      for (size_t j = 0; j < plane; ++j) dst[j] = fg[j] > bg[j] ? 1 : 0;
    }
  }
  return out;
}

struct CaseReport {
  std::string name;
  MetricReport report;
};

namespace detail {

inline std::vector<std::filesystem::path> sorted_sidecars(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir), "io", dir.string() + " is not a directory");
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json" &&
        e.path().filename() != "manifest.json")
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

/// Run fn(i) for i in [0, n) over `threads` workers; results must land in
/// pre-sized slots so the output order is independent of scheduling. The
/// first exception thrown by any worker is rethrown after the join.
template <typename Fn>
void indexed_parallel_for(size_t n, int threads, const Fn& fn) {
  if (threads <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex err_mutex;
  std::exception_ptr err;
  std::vector<std::thread> pool;
  const int tcount = std::min<int>(threads, static_cast<int>(n));
  for (int t = 0; t < tcount; ++t)
    pool.emplace_back([&, t] {
      for (size_t i = static_cast<size_t>(t); i < n; i += static_cast<size_t>(tcount)) {
        try {
          fn(i);
        } catch (...) {
          std::scoped_lock lock(err_mutex);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace detail

/// Pair every prediction sidecar with the same-named file under ref_dir and
/// compute the five-metric report for each.
inline std::vector<CaseReport> evaluate_directories(const std::filesystem::path& pred_dir,
                                                    const std::filesystem::path& ref_dir,
                                                    const ScoreMapping& mapping = {},
                                                    int threads = 1) {
  auto preds = detail::sorted_sidecars(pred_dir);
  require(!preds.empty(), "io", "no prediction sidecars in " + pred_dir.string());
  std::vector<CaseReport> out(preds.size());
  detail::indexed_parallel_for(preds.size(), threads, [&](size_t i) {
    LabelVolume pred = load_labels(preds[i]);
    LabelVolume ref = load_labels(ref_dir / preds[i].filename());
    out[i] = {preds[i].stem().string(), evaluate_pair(pred, ref, mapping)};
  });
  return out;
}

inline std::string report_csv(const std::vector<CaseReport>& reports) {
  std::string csv =
      "case,voe,ravd,assd,rmssd,mssd,score_voe,score_ravd,score_assd,score_rmssd,score_mssd,"
      "mean_score\n";
  char buf[512];
  for (const auto& c : reports) {
    const MetricReport& r = c.report;
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                  c.name.c_str(), r.voe, r.ravd, r.assd, r.rmssd, r.mssd, r.score_voe,
                  r.score_ravd, r.score_assd, r.score_rmssd, r.score_mssd, r.mean_score);
    csv += buf;
  }
  return csv;
}

struct ExperimentOptions {
  std::vector<int> ks{0, 1};
  std::vector<std::string> modes{"none", "2d", "3d"};
  ScoreMapping mapping;
  // Optional synthetic corruption of the predictions before filtering, for
  // controlled studies of the despeckling step.
  int corrupt_speckles = 0;
  int corrupt_radius = 3;
  uint64_t corrupt_seed = 7;
  int threads = 1;
};

/// Mean challenge score per (k, post-processing mode) over the validation
/// cases of a dataset manifest. Checkpoints live at ckpt_dir/k<K>/generator.json.
inline std::string experiment_table(const std::filesystem::path& manifest_path,
                                    const std::filesystem::path& ckpt_dir,
                                    const ExperimentOptions& opt) {
  require(!opt.ks.empty() && !opt.modes.empty(), "config", "need at least one k and one mode");
  for (const auto& m : opt.modes)
    require(m == "none" || m == "2d" || m == "3d", "config", "unknown mode " + m);
  Dataset ds = load_dataset(manifest_path);
  const auto& cases = ds.val.empty() ? ds.train : ds.val;

  std::string csv = "k,mode,mean_score\n";
  char buf[128];
  for (int k : opt.ks) {
    auto ckpt = ckpt_dir / ("k" + std::to_string(k)) / "generator.json";
    auto [gen, meta] = load_checkpoint<float>(ckpt);
    GeneratorConfig gcfg = meta["generator"].get<GeneratorConfig>();
    require(gcfg.k == k, "config",
            "checkpoint " + ckpt.string() + " was trained with k=" + std::to_string(gcfg.k));

    // Predict once per case; filters are applied per mode afterwards.
    std::vector<LabelVolume> preds(cases.size());
    detail::indexed_parallel_for(cases.size(), opt.threads, [&](size_t i) {
      // Training cases are stored normalized; renormalizing is the identity.
      Volume raw;
      raw.width = cases[i].normalized.width;
      raw.height = cases[i].normalized.height;
      raw.depth = cases[i].normalized.depth;
      raw.spacing = cases[i].normalized.spacing;
      raw.voxels = cases[i].normalized.voxels;
      preds[i] = predict_labels(gen, gcfg, raw);
      if (opt.corrupt_speckles > 0)
        preds[i] = corrupt_prediction(preds[i], opt.corrupt_speckles, opt.corrupt_radius,
                                      opt.corrupt_seed + i);
    });

    for (const auto& mode : opt.modes) {
      double total = 0.0;
      for (size_t i = 0; i < cases.size(); ++i) {
        LabelVolume filtered = preds[i];
        if (mode == "2d") filtered = largest_component_filter_2d(filtered);
        if (mode == "3d") filtered = largest_component_filter_3d(filtered);
        total += evaluate_pair(filtered, cases[i].labels, opt.mapping).mean_score;
      }
      std::snprintf(buf, sizeof(buf), "%d,%s,%.6f\n", k, mode.c_str(),
                    total / static_cast<double>(cases.size()));
      csv += buf;
    }
  }
  return csv;
}

}  // namespace advseg
