// advseg: phantom generation, adversarial training, prediction, despeckling,
// and five-metric evaluation for volumetric binary segmentation.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "advseg/advseg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalOpts {
  uint64_t seed = 24091;
  bool seed_given = false;
  int threads = 1;
  std::string config;
};

advseg::ScoreMapping load_score_mapping(const std::string& path) {
  advseg::ScoreMapping m;
  if (path.empty()) return m;
  std::ifstream f(path);
  advseg::require(f.good(), "io", "cannot open " + path);
  json j = json::parse(f, nullptr, true);
  if (j.contains("voe")) m.voe = j["voe"].get<double>();
  if (j.contains("ravd")) m.ravd = j["ravd"].get<double>();
  if (j.contains("assd")) m.assd = j["assd"].get<double>();
  if (j.contains("rmssd")) m.rmssd = j["rmssd"].get<double>();
  if (j.contains("mssd")) m.mssd = j["mssd"].get<double>();
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  advseg::require(f.good(), "io", "cannot write " + path.string());
  f << text;
  advseg::require(f.good(), "io", "short write to " + path.string());
}

std::array<int, 3> parse_dims(const std::string& s) {
  std::array<int, 3> d{};
  advseg::require(std::sscanf(s.c_str(), "%dx%dx%d", &d[0], &d[1], &d[2]) == 3, "config",
                  "--dims must look like WxHxD, got " + s);
  return d;
}

int run_phantom(const GlobalOpts& g, const std::string& out_dir, int count,
                const std::string& dims_text, double noise, double bias) {
  advseg::require(count >= 1, "config", "--count must be >= 1");
  auto dims = parse_dims(dims_text);
  fs::create_directories(out_dir);
  advseg::Rng case_rng = advseg::Rng(g.seed).fork("phantom-cases");

  json cases = json::array();
  const int n_val = count >= 2 ? std::max(1, count / 4) : 0;
  for (int i = 0; i < count; ++i) {
    advseg::PhantomSpec spec;
    spec.width = dims[0];
    spec.height = dims[1];
    spec.depth = dims[2];
    spec.spacing = {1.0, 1.0, 1.6};
    spec.organ_axes = {0.30 * dims[0] * (0.85 + 0.3 * case_rng.uniform()),
                       0.24 * dims[1] * (0.85 + 0.3 * case_rng.uniform()),
                       0.28 * dims[2] * (0.85 + 0.3 * case_rng.uniform())};
    spec.noise_sigma = static_cast<float>(noise);
    spec.bias_amplitude = static_cast<float>(bias);
    spec.seed = case_rng.next();
    auto [vol, mask] = advseg::make_phantom(spec);

    char name[64];
    std::snprintf(name, sizeof(name), "case_%03d", i);
    std::string vol_file = std::string(name) + ".json";
    std::string lab_file = std::string(name) + "_labels.json";
    advseg::save_volume(vol, fs::path(out_dir) / vol_file);
    advseg::save_labels(mask, fs::path(out_dir) / lab_file);
    cases.push_back({{"volume", vol_file},
                     {"labels", lab_file},
                     {"split", i >= count - n_val ? "val" : "train"}});
  }
  json manifest{{"cases", cases}};
  write_text(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");
  std::printf("wrote %d phantom pairs to %s\n", count, out_dir.c_str());
  return 0;
}

int run_train(const GlobalOpts& g, const std::string& data_dir, const std::string& out_dir,
              const std::string& config_path, const std::string& resume_dir) {
  advseg::TrainConfig tcfg;
  advseg::GeneratorConfig gcfg;
  advseg::DiscriminatorConfig dcfg;
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    advseg::require(f.good(), "io", "cannot open " + config_path);
    json j = json::parse(f, nullptr, true);
    tcfg = j.get<advseg::TrainConfig>();
    if (j.contains("generator")) gcfg = j["generator"].get<advseg::GeneratorConfig>();
    if (j.contains("discriminator"))
      dcfg = j["discriminator"].get<advseg::DiscriminatorConfig>();
  }
  if (g.seed_given) tcfg.seed = g.seed;

  advseg::Dataset ds = advseg::load_dataset(fs::path(data_dir) / "manifest.json");
  advseg::TrainerState st = resume_dir.empty()
                                ? advseg::init_trainer(gcfg, dcfg, tcfg)
                                : advseg::load_train_checkpoint(resume_dir);
  fs::create_directories(out_dir);

  const fs::path stats_path = fs::path(out_dir) / "stats.csv";
  bool fresh = !fs::exists(stats_path) || fs::file_size(stats_path) == 0;
  std::ofstream stats(stats_path, std::ios::app);
  advseg::require(stats.good(), "io", "cannot write " + stats_path.string());
  if (fresh) stats << advseg::stats_csv_header() << "\n";

  auto result = advseg::train(std::move(st), ds,
                              [&](const advseg::TrainerState& cur, const advseg::StatsRow& row) {
                                stats << advseg::to_csv(row) << "\n";
                                stats.flush();
                                if (row.iter % cur.tcfg.checkpoint_interval == 0) {
                                  char name[32];
                                  std::snprintf(name, sizeof(name), "ckpt_%06d", row.iter);
                                  advseg::save_train_checkpoint(cur, fs::path(out_dir) / name);
                                }
                              });
  stats.flush();
  advseg::require(stats.good(), "io", "failed writing " + stats_path.string());

  advseg::save_train_checkpoint(result.state, fs::path(out_dir) / "final");
  json gmeta{{"generator", result.state.gcfg}, {"k", result.state.tcfg.k}};
  advseg::save_checkpoint(result.state.gen, gmeta, fs::path(out_dir) / "generator.json");
  advseg::save_checkpoint(result.state.disc, json{{"discriminator", result.state.dcfg}},
                          fs::path(out_dir) / "discriminator.json");
  std::printf("trained to iteration %d; generator checksum %016" PRIx64 "\n",
              result.state.iteration, advseg::params_checksum(result.state.gen));
  return 0;
}

int run_predict(const std::string& ckpt, const std::string& volume, const std::string& out,
                int k_flag) {
  auto [gen, meta] = advseg::load_checkpoint<float>(ckpt);
  advseg::require(meta.contains("generator"), "format",
                  "checkpoint " + ckpt + " carries no generator config");
  auto gcfg = meta["generator"].get<advseg::GeneratorConfig>();
  if (k_flag >= 0)
    advseg::require(k_flag == gcfg.k, "config",
                    "--k " + std::to_string(k_flag) + " does not match checkpoint k=" +
                        std::to_string(gcfg.k));
  advseg::Volume vol = advseg::load_volume(volume);
  advseg::LabelVolume pred = advseg::predict_labels(gen, gcfg, vol);
  advseg::save_labels(pred, out);
  std::printf("wrote %s (%zu foreground voxels)\n", out.c_str(), pred.foreground_count());
  return 0;
}

int run_despeckle(const std::string& in, const std::string& out, const std::string& mode,
                  int connectivity) {
  advseg::LabelVolume mask = advseg::load_labels(in);
  advseg::LabelVolume filtered;
  if (mode == "2d") {
    int conn = connectivity == 0 ? 8 : connectivity;
    advseg::require(conn == 4 || conn == 8, "config", "2d connectivity must be 4 or 8");
    filtered = advseg::largest_component_filter_2d(
        mask, conn == 4 ? advseg::Connectivity::d2_4 : advseg::Connectivity::d2_8);
  } else if (mode == "3d") {
    int conn = connectivity == 0 ? 26 : connectivity;
    advseg::require(conn == 6 || conn == 26, "config", "3d connectivity must be 6 or 26");
    filtered = advseg::largest_component_filter_3d(
        mask, conn == 6 ? advseg::Connectivity::d3_6 : advseg::Connectivity::d3_26);
  } else {
    advseg::fail("config", "--mode must be 2d or 3d");
  }
  advseg::save_labels(filtered, out);
  std::printf("wrote %s (%zu -> %zu foreground voxels)\n", out.c_str(),
              mask.foreground_count(), filtered.foreground_count());
  return 0;
}

int run_evaluate(const GlobalOpts& g, const std::string& pred, const std::string& ref,
                 const std::string& out, const std::string& refs_path) {
  auto mapping = load_score_mapping(refs_path);
  auto reports = advseg::evaluate_directories(pred, ref, mapping, g.threads);
  write_text(out, advseg::report_csv(reports));
  double mean = 0.0;
  for (const auto& c : reports) mean += c.report.mean_score;
  std::printf("wrote %s (%zu cases, mean score %.2f)\n", out.c_str(), reports.size(),
              mean / static_cast<double>(reports.size()));
  return 0;
}

int run_experiment(const GlobalOpts& g, const std::string& data_dir, const std::string& ckpts,
                   const std::string& out, const std::vector<int>& ks,
                   const std::vector<std::string>& modes, const std::string& refs_path,
                   int corrupt_speckles, int corrupt_radius, uint64_t corrupt_seed) {
  advseg::ExperimentOptions opt;
  opt.ks = ks;
  opt.modes = modes;
  opt.mapping = load_score_mapping(refs_path);
  opt.corrupt_speckles = corrupt_speckles;
  opt.corrupt_radius = corrupt_radius;
  opt.corrupt_seed = corrupt_seed;
  opt.threads = g.threads;
  std::string csv =
      advseg::experiment_table(fs::path(data_dir) / "manifest.json", ckpts, opt);
  write_text(out, csv);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarially trained volumetric segmentation pipeline"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  GlobalOpts g;
  app.add_option("--seed", g.seed, "Seed for commands that draw randomness")
      ->each([&](const std::string&) { g.seed_given = true; });
  app.add_option("--threads", g.threads, "Worker threads for per-case parallel stages");
  app.add_option("--config", g.config, "Configuration file (train subcommand)");

  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic dataset with a manifest");
  std::string ph_out, ph_dims = "64x64x24";
  int ph_count = 8;
  double ph_noise = 8.0, ph_bias = 0.1;
  phantom->add_option("--out", ph_out, "Output directory")->required();
  phantom->add_option("--count", ph_count, "Number of (volume, labels) pairs");
  phantom->add_option("--dims", ph_dims, "Volume dimensions WxHxD");
  phantom->add_option("--noise", ph_noise, "Additive noise sigma");
  phantom->add_option("--bias", ph_bias, "Multiplicative bias amplitude in [0,1)");

  auto* train = app.add_subcommand("train", "Adversarial training on a phantom dataset");
  std::string tr_data, tr_out, tr_config, tr_resume;
  train->add_option("--data", tr_data, "Dataset directory containing manifest.json")->required();
  train->add_option("--out", tr_out, "Output directory")->required();
  train->add_option("--config", tr_config, "train.json configuration");
  train->add_option("--resume", tr_resume, "Checkpoint directory to resume from");

  auto* predict = app.add_subcommand("predict", "Segment a volume with a trained generator");
  std::string pr_ckpt, pr_vol, pr_out;
  int pr_k = -1;
  predict->add_option("--checkpoint", pr_ckpt, "generator.json checkpoint")->required();
  predict->add_option("--volume", pr_vol, "Input volume sidecar")->required();
  predict->add_option("--out", pr_out, "Output labels sidecar")->required();
  predict->add_option("--k", pr_k, "Expected neighborhood radius (verified)");

  auto* despeckle = app.add_subcommand("despeckle", "Largest-connected-component filtering");
  std::string de_in, de_out, de_mode;
  int de_conn = 0;
  despeckle->add_option("--in", de_in, "Input labels sidecar")->required();
  despeckle->add_option("--out", de_out, "Output labels sidecar")->required();
  despeckle->add_option("--mode", de_mode, "2d or 3d")->required();
  despeckle->add_option("--connectivity", de_conn, "4/8 for 2d, 6/26 for 3d");

  auto* evaluate = app.add_subcommand("evaluate", "Five-metric challenge-style scoring");
  std::string ev_pred, ev_ref, ev_out, ev_refs;
  evaluate->add_option("--pred", ev_pred, "Directory of predicted label sidecars")->required();
  evaluate->add_option("--ref", ev_ref, "Directory of reference label sidecars")->required();
  evaluate->add_option("--out", ev_out, "Output report CSV")->required();
  evaluate->add_option("--refs", ev_refs, "Score-mapping reference JSON");

  auto* experiment = app.add_subcommand("experiment", "Score grid over k and despeckle modes");
  std::string ex_data, ex_ckpts, ex_out, ex_refs;
  std::vector<int> ex_ks{0, 1};
  std::vector<std::string> ex_modes{"none", "2d", "3d"};
  int ex_cs = 0, ex_cr = 3;
  uint64_t ex_cseed = 7;
  experiment->add_option("--data", ex_data, "Dataset directory containing manifest.json")
      ->required();
  experiment->add_option("--checkpoints", ex_ckpts, "Directory with k<K>/generator.json")
      ->required();
  experiment->add_option("--out", ex_out, "Output CSV")->required();
  experiment->add_option("--ks", ex_ks, "Neighborhood radii to evaluate")->delimiter(',');
  experiment->add_option("--modes", ex_modes, "Post-processing modes")->delimiter(',');
  experiment->add_option("--refs", ex_refs, "Score-mapping reference JSON");
  experiment->add_option("--corrupt-speckles", ex_cs, "Speckles added to each prediction");
  experiment->add_option("--corrupt-radius", ex_cr, "Speckle radius in voxels");
  experiment->add_option("--corrupt-seed", ex_cseed, "Speckle placement seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*phantom) return run_phantom(g, ph_out, ph_count, ph_dims, ph_noise, ph_bias);
    if (*train) {
      std::string cfg = !tr_config.empty() ? tr_config : g.config;
      return run_train(g, tr_data, tr_out, cfg, tr_resume);
    }
    if (*predict) return run_predict(pr_ckpt, pr_vol, pr_out, pr_k);
    if (*despeckle) return run_despeckle(de_in, de_out, de_mode, de_conn);
    if (*evaluate) return run_evaluate(g, ev_pred, ev_ref, ev_out, ev_refs);
    if (*experiment)
      return run_experiment(g, ex_data, ex_ckpts, ex_out, ex_ks, ex_modes, ex_refs, ex_cs, ex_cr,
                            ex_cseed);
  } catch (const advseg::Error& e) {
    json err{{"error", e.code()}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    json err{{"error", "internal"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 1;
}
