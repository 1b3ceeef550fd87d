#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "testutil.hpp"

using namespace advseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "advseg_volume_test";
  fs::create_directories(dir);
  return dir;
}

Volume small_volume() {
  Volume v;
  v.width = 2;
  v.height = 2;
  v.depth = 2;
  v.spacing = {1.0, 1.0, 1.0};
  v.voxels = {0, 1, 2, 3, 4, 5, 6, 7};
  return v;
}

}  // namespace

TEST_CASE("volume round trip is bit exact") {
  auto dir = temp_dir();
  Volume v = small_volume();
  v.spacing = {0.75, 1.25, 2.0};
  save_volume(v, dir / "v.json");
  Volume loaded = load_volume(dir / "v.json");
  CHECK(loaded.width == 2);
  CHECK(loaded.height == 2);
  CHECK(loaded.depth == 2);
  CHECK(loaded.spacing == v.spacing);
  CHECK(loaded.voxels == v.voxels);

  SECTION("re-save produces byte-identical raw payload") {
    save_volume(loaded, dir / "v2.json");
    auto a = detail::read_all(dir / "v.raw");
    auto b = detail::read_all(dir / "v2.raw");
    CHECK(a == b);
  }
}

TEST_CASE("volume loader rejects malformed files") {
  auto dir = temp_dir();
  Volume v = small_volume();
  save_volume(v, dir / "bad.json");

  SECTION("payload size mismatch") {
    std::ofstream raw(dir / "bad.raw", std::ios::binary | std::ios::trunc);
    float vals[60] = {};
    raw.write(reinterpret_cast<const char*>(vals), sizeof(vals));
    raw.close();
    CHECK_THROWS_MATCHES(load_volume(dir / "bad.json"), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == "shape"; }));
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(load_volume(dir / "missing.json"), Error);
  }
  SECTION("non-finite voxels rejected") {
    Volume nan_vol = small_volume();
    nan_vol.voxels[3] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(save_volume(nan_vol, dir / "nan.json"), Error);
  }
  SECTION("zero depth rejected before write") {
    Volume z = small_volume();
    z.depth = 0;
    z.voxels.clear();
    CHECK_THROWS_AS(save_volume(z, dir / "zero.json"), Error);
    CHECK(!fs::exists(dir / "zero.raw"));
  }
  SECTION("non-positive spacing rejected") {
    Volume s = small_volume();
    s.spacing[1] = 0.0;
    CHECK_THROWS_AS(save_volume(s, dir / "sp.json"), Error);
  }
}

TEST_CASE("1x1x1 volume writes exactly 4 raw bytes") {
  auto dir = temp_dir();
  Volume v;
  v.width = v.height = v.depth = 1;
  v.voxels = {3.5f};
  save_volume(v, dir / "one.json");
  CHECK(fs::file_size(dir / "one.raw") == 4);
  CHECK(load_volume(dir / "one.json").voxels == std::vector<float>{3.5f});
}

TEST_CASE("label round trip and validation") {
  auto dir = temp_dir();
  LabelVolume lv = testutil::make_mask(2, 2, 1, {0, 1, 1, 0});
  CHECK(lv.foreground_count() == 2);
  save_labels(lv, dir / "l.json");
  LabelVolume loaded = load_labels(dir / "l.json");
  CHECK(loaded.labels == lv.labels);

  SECTION("values other than 0/1 rejected") {
    std::ofstream raw(dir / "l.raw", std::ios::binary | std::ios::trunc);
    const uint8_t vals[4] = {0, 1, 2, 0};
    raw.write(reinterpret_cast<const char*>(vals), sizeof(vals));
    raw.close();
    CHECK_THROWS_AS(load_labels(dir / "l.json"), Error);
  }
}

TEST_CASE("normalization matches the min-max rescale") {
  Volume v;
  v.width = 3;
  v.height = 1;
  v.depth = 1;
  v.voxels = {2, 4, 6};
  auto [out, rec] = normalize(v);
  CHECK(rec.min_value == 2.0f);
  CHECK(rec.max_value == 6.0f);
  CHECK(out.voxels == std::vector<float>{0.0f, 0.5f, 1.0f});

  SECTION("constant volume maps to zeros") {
    Volume c = v;
    c.voxels = {5, 5, 5};
    auto [cout_, crec] = normalize(c);
    CHECK(cout_.voxels == std::vector<float>{0, 0, 0});
    CHECK(crec.min_value == 5.0f);
    CHECK(crec.max_value == 5.0f);
  }
  SECTION("idempotent once in [0,1]") {
    auto again = normalize(out).first;
    CHECK(again.voxels == out.voxels);
  }
}

TEST_CASE("normalization properties on random volumes") {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    Volume v;
    v.width = rng.range(1, 6);
    v.height = rng.range(1, 6);
    v.depth = rng.range(1, 6);
    v.voxels.resize(v.voxel_count());
    for (auto& x : v.voxels) x = static_cast<float>(200.0 * rng.uniform() - 100.0);
    auto [out, rec] = normalize(v);
    REQUIRE(out.voxels.size() == v.voxels.size());

    float mn = *std::min_element(out.voxels.begin(), out.voxels.end());
    float mx = *std::max_element(out.voxels.begin(), out.voxels.end());
    if (rec.max_value > rec.min_value) {
      CHECK(mn == 0.0f);
      CHECK(mx == 1.0f);
    }
    // Monotone: order relations survive the rescale.
    for (int probe = 0; probe < 20; ++probe) {
      size_t i = rng.below(v.voxels.size());
      size_t j = rng.below(v.voxels.size());
      if (v.voxels[i] <= v.voxels[j]) CHECK(out.voxels[i] <= out.voxels[j]);
    }
  }
}

TEST_CASE("slice groups clamp at the edges") {
  Volume v;
  v.width = 2;
  v.height = 1;
  v.depth = 5;
  v.voxels.resize(10);
  for (int z = 0; z < 5; ++z) {
    v.voxels[2 * z] = z / 4.0f;
    v.voxels[2 * z + 1] = z / 4.0f;
  }

  SECTION("interior index takes the true neighbors") {
    SliceGroup g = slice_group(v, 2, 1);
    REQUIRE(g.channel_count() == 3);
    CHECK(g.channel(0)[0] == v.slice(1)[0]);
    CHECK(g.channel(1)[0] == v.slice(2)[0]);
    CHECK(g.channel(2)[0] == v.slice(3)[0]);
  }
  SECTION("first slice replicates itself") {
    SliceGroup g = slice_group(v, 0, 1);
    CHECK(g.channel(0)[0] == v.slice(0)[0]);
    CHECK(g.channel(1)[0] == v.slice(0)[0]);
    CHECK(g.channel(2)[0] == v.slice(1)[0]);
  }
  SECTION("k=0 is the slice itself") {
    SliceGroup g = slice_group(v, 3, 0);
    REQUIRE(g.channel_count() == 1);
    CHECK(g.channel(0)[1] == v.slice(3)[1]);
  }
  SECTION("out-of-range index rejected") {
    CHECK_THROWS_AS(slice_group(v, 5, 1), Error);
    CHECK_THROWS_AS(slice_group(v, -1, 1), Error);
  }
  SECTION("unnormalized input rejected") {
    Volume bad = v;
    bad.voxels[0] = 2.0f;
    CHECK_THROWS_AS(slice_group(bad, 2, 1), Error);
  }
}

TEST_CASE("slice group channels are exact slice copies for random volumes") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    Volume v;
    v.width = rng.range(1, 5);
    v.height = rng.range(1, 5);
    v.depth = rng.range(1, 7);
    v.voxels.resize(v.voxel_count());
    for (auto& x : v.voxels) x = static_cast<float>(rng.uniform());
    int i = rng.range(0, v.depth - 1);
    int k = rng.range(0, 3);
    SliceGroup g = slice_group(v, i, k);
    REQUIRE(g.channel_count() == 2 * k + 1);
    for (int c = 0; c < g.channel_count(); ++c) {
      int z = std::clamp(i - k + c, 0, v.depth - 1);
      CHECK(std::equal(g.channel(c), g.channel(c) + v.slice_size(), v.slice(z)));
    }
  }
}
