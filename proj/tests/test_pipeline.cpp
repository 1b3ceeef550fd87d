#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "testutil.hpp"

using namespace advseg;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Dataset small_dataset(int n_train, int n_val, uint64_t seed) {
  Dataset ds;
  Rng rng(seed);
  for (int i = 0; i < n_train + n_val; ++i) {
    PhantomSpec spec;
    spec.width = 16;
    spec.height = 16;
    spec.depth = 8;
    spec.organ_axes = {4.5, 4.0, 2.5};
    spec.noise_sigma = 4.0f;
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

}  // namespace

TEST_CASE("predict honors the argmax-to-background tie rule") {
  GeneratorConfig cfg;
  cfg.k = 1;
  cfg.depth = 2;
  cfg.base_channels = 2;
  cfg.input_h = 16;
  cfg.input_w = 16;
  auto gen = init_generator<float>(cfg, 3);
  std::fill(gen.get("final.conv_w").v.begin(), gen.get("final.conv_w").v.end(), 0.0f);
  std::fill(gen.get("final.conv_b").v.begin(), gen.get("final.conv_b").v.end(), 0.0f);

  PhantomSpec spec;
  spec.width = 16;
  spec.height = 16;
  spec.depth = 8;
  spec.organ_axes = {4.5, 4.0, 2.5};
  spec.seed = 5;
  auto [vol, mask] = make_phantom(spec);

  LabelVolume pred = predict_labels(gen, cfg, vol);
  CHECK(pred.depth == vol.depth);
  CHECK(pred.width == vol.width);
  CHECK(pred.foreground_count() == 0);  // zero logits tie to background

  SECTION("non-divisible spatial sizes fail with a padding hint") {
    Volume odd;
    odd.width = 18;
    odd.height = 16;
    odd.depth = 4;
    odd.voxels.assign(odd.voxel_count(), 0.5f);
    try {
      predict_labels(gen, cfg, odd);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == "shape");
      CHECK(std::string(e.what()).find("pad") != std::string::npos);
    }
  }
}

TEST_CASE("a briefly trained generator predicts overlapping masks end to end") {
  Dataset ds = small_dataset(3, 1, 6060);
  GeneratorConfig gcfg;
  gcfg.k = 1;
  gcfg.depth = 2;
  gcfg.base_channels = 4;
  gcfg.input_h = 16;
  gcfg.input_w = 16;
  DiscriminatorConfig dcfg;
  dcfg.levels = 2;
  dcfg.base_channels = 4;
  TrainConfig tcfg;
  tcfg.total_iterations = 150;
  tcfg.batch_size = 4;
  tcfg.k = 1;
  tcfg.seed = 11;

  TrainResult r = train(init_trainer(gcfg, dcfg, tcfg), ds);

  // Rebuild a raw volume from the stored normalized one (normalize is
  // idempotent on [0,1] data).
  Volume raw;
  raw.width = ds.val[0].normalized.width;
  raw.height = ds.val[0].normalized.height;
  raw.depth = ds.val[0].normalized.depth;
  raw.spacing = ds.val[0].normalized.spacing;
  raw.voxels = ds.val[0].normalized.voxels;
  LabelVolume pred = predict_labels(r.state.gen, r.state.gcfg, raw);
  REQUIRE(pred.foreground_count() > 0);
  double voe = volumetric_overlap_error(pred, ds.val[0].labels);
  CHECK(voe < 100.0);

  SECTION("experiment table: despeckling strictly beats no post-processing") {
    auto dir = fresh_dir("advseg_pipeline_exp");
    // Write the dataset and a k=1 checkpoint in the on-disk layout.
    nlohmann::json cases = nlohmann::json::array();
    for (size_t i = 0; i < ds.val.size(); ++i) {
      std::string base = "case_" + std::to_string(i);
      Volume v;
      v.width = ds.val[i].normalized.width;
      v.height = ds.val[i].normalized.height;
      v.depth = ds.val[i].normalized.depth;
      v.spacing = ds.val[i].normalized.spacing;
      v.voxels = ds.val[i].normalized.voxels;
      save_volume(v, dir / (base + ".json"));
      save_labels(ds.val[i].labels, dir / (base + "_labels.json"));
      cases.push_back({{"volume", base + ".json"},
                       {"labels", base + "_labels.json"},
                       {"split", "val"}});
      cases.push_back({{"volume", base + ".json"},
                       {"labels", base + "_labels.json"},
                       {"split", "train"}});
    }
    std::ofstream mf(dir / "manifest.json");
    mf << nlohmann::json{{"cases", cases}}.dump(2);
    mf.close();
    fs::create_directories(dir / "ckpts" / "k1");
    save_checkpoint(r.state.gen, nlohmann::json{{"generator", r.state.gcfg}},
                    dir / "ckpts" / "k1" / "generator.json");

    ExperimentOptions opt;
    opt.ks = {1};
    opt.modes = {"none", "3d"};
    opt.corrupt_speckles = 3;
    opt.corrupt_radius = 1;
    std::string csv = experiment_table(dir / "manifest.json", dir / "ckpts", opt);
    INFO(csv);
    CHECK(csv.starts_with("k,mode,mean_score\n"));

    double none_score = -1.0, filtered_score = -1.0;
    REQUIRE(std::sscanf(csv.c_str(), "k,mode,mean_score\n1,none,%lf\n1,3d,%lf", &none_score,
                        &filtered_score) == 2);
    CHECK(filtered_score > none_score);

    SECTION("identical reruns produce identical bytes") {
      CHECK(experiment_table(dir / "manifest.json", dir / "ckpts", opt) == csv);
    }
    SECTION("single k and mode produce exactly one data row") {
      ExperimentOptions single;
      single.ks = {1};
      single.modes = {"3d"};
      std::string small = experiment_table(dir / "manifest.json", dir / "ckpts", single);
      CHECK(std::count(small.begin(), small.end(), '\n') == 2);
    }
  }
}

TEST_CASE("evaluate pairs predictions with same-named references") {
  auto pred_dir = fresh_dir("advseg_pipeline_pred");
  auto ref_dir = fresh_dir("advseg_pipeline_ref");
  LabelVolume ref = testutil::box_mask(8, 8, 8, 2, 6, 2, 6, 2, 6);
  LabelVolume close = testutil::box_mask(8, 8, 8, 2, 6, 2, 6, 2, 5);
  save_labels(ref, ref_dir / "a.json");
  save_labels(ref, ref_dir / "b.json");
  save_labels(ref, pred_dir / "a.json");
  save_labels(close, pred_dir / "b.json");

  auto reports = evaluate_directories(pred_dir, ref_dir);
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].name == "a");
  CHECK(reports[0].report.mean_score == 100.0);
  CHECK(reports[1].report.mean_score < 100.0);

  std::string csv = report_csv(reports);
  CHECK(csv.starts_with(
      "case,voe,ravd,assd,rmssd,mssd,score_voe,score_ravd,score_assd,score_rmssd,score_mssd,"
      "mean_score\n"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

  SECTION("multithreaded evaluation returns the same reports") {
    auto threaded = evaluate_directories(pred_dir, ref_dir, ScoreMapping{}, 4);
    REQUIRE(threaded.size() == reports.size());
    for (size_t i = 0; i < reports.size(); ++i) {
      CHECK(threaded[i].name == reports[i].name);
      CHECK(threaded[i].report.mean_score == reports[i].report.mean_score);
    }
  }
  SECTION("missing reference is an io error") {
    save_labels(close, pred_dir / "orphan.json");
    CHECK_THROWS_AS(evaluate_directories(pred_dir, ref_dir), Error);
  }
}

#ifdef ADVSEG_CLI_PATH
TEST_CASE("command-line pipeline runs end to end") {
  auto dir = fresh_dir("advseg_cli_smoke");
  const std::string cli = ADVSEG_CLI_PATH;
  auto run = [&](const std::string& args) {
    std::string cmd = cli + " " + args + " > " + (dir / "out.log").string() + " 2> " +
                      (dir / "err.log").string();
    return std::system(cmd.c_str());
  };
  auto read_err = [&] {
    std::ifstream f(dir / "err.log");
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  };

  REQUIRE(run("phantom --out " + (dir / "data").string() +
              " --count 4 --seed 9 --dims 16x16x8 --noise 4 --bias 0.05") == 0);
  REQUIRE(fs::exists(dir / "data" / "manifest.json"));
  REQUIRE(fs::exists(dir / "data" / "case_003.json"));

  {
    nlohmann::json cfg{{"total_iterations", 30},
                       {"batch_size", 2},
                       {"k", 1},
                       {"seed", 5},
                       {"checkpoint_interval", 15},
                       {"generator", {{"depth", 2}, {"base_channels", 2},
                                      {"input_h", 16}, {"input_w", 16}}},
                       {"discriminator", {{"levels", 2}, {"base_channels", 2}}}};
    std::ofstream f(dir / "train.json");
    f << cfg.dump(2);
  }
  REQUIRE(run("train --data " + (dir / "data").string() + " --out " + (dir / "run").string() +
              " --config " + (dir / "train.json").string()) == 0);
  REQUIRE(fs::exists(dir / "run" / "generator.json"));
  REQUIRE(fs::exists(dir / "run" / "stats.csv"));
  REQUIRE(fs::exists(dir / "run" / "ckpt_000015"));

  REQUIRE(run("predict --checkpoint " + (dir / "run" / "generator.json").string() +
              " --volume " + (dir / "data" / "case_003.json").string() + " --out " +
              (dir / "pred" / "case_003_labels.json").string()) == 0);

  REQUIRE(run("despeckle --in " + (dir / "pred" / "case_003_labels.json").string() + " --out " +
              (dir / "clean" / "case_003_labels.json").string() + " --mode 3d") == 0);

  REQUIRE(run("evaluate --pred " + (dir / "clean").string() + " --ref " +
              (dir / "data").string() + " --out " + (dir / "report.csv").string()) == 0);
  {
    std::ifstream f(dir / "report.csv");
    std::string header;
    std::getline(f, header);
    CHECK(header ==
          "case,voe,ravd,assd,rmssd,mssd,score_voe,score_ravd,score_assd,score_rmssd,"
          "score_mssd,mean_score");
  }

  SECTION("score references can be overridden from a file") {
    {
      std::ofstream f(dir / "refs.json");
      f << R"({"voe": 12.8, "mssd": 38.0})";
    }
    REQUIRE(run("evaluate --pred " + (dir / "clean").string() + " --ref " +
                (dir / "data").string() + " --out " + (dir / "report2.csv").string() +
                " --refs " + (dir / "refs.json").string()) == 0);
    CHECK(fs::exists(dir / "report2.csv"));
  }
  SECTION("training resumes from a checkpoint directory") {
    REQUIRE(run("train --data " + (dir / "data").string() + " --out " +
                (dir / "resumed").string() + " --config " + (dir / "train.json").string() +
                " --resume " + (dir / "run" / "ckpt_000015").string()) == 0);
    auto [resumed, meta_r] = load_checkpoint<float>(dir / "resumed" / "generator.json");
    auto [straight, meta_s] = load_checkpoint<float>(dir / "run" / "generator.json");
    CHECK(params_checksum(resumed) == params_checksum(straight));
  }

  SECTION("k mismatch fails with a machine-parsable error line") {
    int rc = run("predict --checkpoint " + (dir / "run" / "generator.json").string() +
                 " --volume " + (dir / "data" / "case_003.json").string() + " --out " +
                 (dir / "pred" / "x.json").string() + " --k 0");
    CHECK(rc != 0);
    auto err = nlohmann::json::parse(read_err());
    CHECK(err["error"] == "config");
  }
  SECTION("missing inputs fail with a machine-parsable error line") {
    int rc = run("predict --checkpoint " + (dir / "nothere.json").string() + " --volume " +
                 (dir / "data" / "case_003.json").string() + " --out " +
                 (dir / "pred" / "x.json").string());
    CHECK(rc != 0);
    auto err = nlohmann::json::parse(read_err());
    CHECK(err["error"] == "io");
  }
}
#endif
