#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "advseg/core.hpp"

namespace advseg {

/// 3D scalar grid. Voxels are stored in (z, y, x) row-major order; spacing is
/// millimeters per voxel along (x, y, z).
struct Volume {
  int width = 0, height = 0, depth = 0;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<float> voxels;

  size_t slice_size() const { return static_cast<size_t>(width) * height; }
  size_t voxel_count() const { return slice_size() * depth; }
  const float* slice(int z) const { return voxels.data() + slice_size() * z; }
  float* slice(int z) { return voxels.data() + slice_size() * z; }
};

/// Binary mask aligned to a Volume. 0 = background, 1 = foreground.
struct LabelVolume {
  int width = 0, height = 0, depth = 0;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<uint8_t> labels;

  size_t slice_size() const { return static_cast<size_t>(width) * height; }
  size_t voxel_count() const { return slice_size() * depth; }
  const uint8_t* slice(int z) const { return labels.data() + slice_size() * z; }
  uint8_t* slice(int z) { return labels.data() + slice_size() * z; }
  size_t foreground_count() const {
    size_t n = 0;
    for (uint8_t l : labels) n += l;
    return n;
  }
};

struct NormalizationRecord {
  float min_value = 0.0f;
  float max_value = 0.0f;
};

/// Stack of 2k+1 consecutive normalized slices centered on `center_index`,
/// stored channel-major (channel, y, x). One network input.
struct SliceGroup {
  int center_index = 0;
  int k = 0;
  int width = 0, height = 0;
  std::vector<float> channels;

  int channel_count() const { return 2 * k + 1; }
  const float* channel(int c) const {
    return channels.data() + static_cast<size_t>(c) * width * height;
  }
};

namespace detail {

inline void check_dims(int w, int h, int d, const std::array<double, 3>& sp) {
  require(w > 0 && h > 0 && d > 0, "shape",
          "volume dimensions must be positive, got " + std::to_string(w) + "x" +
              std::to_string(h) + "x" + std::to_string(d));
  for (double s : sp)
    require(s > 0.0 && std::isfinite(s), "value", "spacing components must be positive and finite");
}

inline std::filesystem::path raw_path_for(const std::filesystem::path& sidecar) {
  require(sidecar.extension() == ".json", "format",
          "volume path must name the .json sidecar, got " + sidecar.string());
  std::filesystem::path p = sidecar;
  p.replace_extension(".raw");
  return p;
}

inline std::vector<char> read_all(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  require(f.good(), "io", "cannot open " + p.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_all(const std::filesystem::path& p, const void* data, size_t len) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  require(f.good(), "io", "cannot write " + p.string());
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  require(f.good(), "io", "short write to " + p.string());
}

inline nlohmann::json load_sidecar(const std::filesystem::path& p, const char* want_dtype) {
  auto bytes = read_all(p);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail("format", "bad sidecar " + p.string() + ": " + e.what());
  }
  for (const char* key : {"width", "height", "depth", "spacing", "dtype"})
    require(j.contains(key), "format", "sidecar " + p.string() + " missing field '" + key + "'");
  require(j["dtype"] == want_dtype, "format",
          "sidecar " + p.string() + " has dtype '" + j["dtype"].get<std::string>() +
              "', expected '" + want_dtype + "'");
  require(j["spacing"].is_array() && j["spacing"].size() == 3, "format",
          "sidecar spacing must be a 3-array");
  return j;
}

}  // namespace detail

inline void validate(const Volume& v) {
  detail::check_dims(v.width, v.height, v.depth, v.spacing);
  require(v.voxels.size() == v.voxel_count(), "shape",
          "voxel payload size does not match dimensions");
  require(all_finite(v.voxels), "value", "volume contains non-finite intensities");
}

inline void validate(const LabelVolume& lv) {
  detail::check_dims(lv.width, lv.height, lv.depth, lv.spacing);
  require(lv.labels.size() == lv.voxel_count(), "shape",
          "label payload size does not match dimensions");
  for (uint8_t l : lv.labels)
    require(l <= 1, "value", "labels must be 0 or 1, got " + std::to_string(int(l)));
}

inline void save_volume(const Volume& v, const std::filesystem::path& sidecar) {
  validate(v);
  nlohmann::json j{{"width", v.width},
                   {"height", v.height},
                   {"depth", v.depth},
                   {"spacing", {v.spacing[0], v.spacing[1], v.spacing[2]}},
                   {"dtype", "f32"}};
  std::string text = j.dump(2);
  text.push_back('\n');
  detail::write_all(sidecar, text.data(), text.size());
  detail::write_all(detail::raw_path_for(sidecar), v.voxels.data(), v.voxels.size() * sizeof(float));
}

inline Volume load_volume(const std::filesystem::path& sidecar) {
  nlohmann::json j = detail::load_sidecar(sidecar, "f32");
  Volume v;
  v.width = j["width"].get<int>();
  v.height = j["height"].get<int>();
  v.depth = j["depth"].get<int>();
  for (int i = 0; i < 3; ++i) v.spacing[i] = j["spacing"][i].get<double>();
  detail::check_dims(v.width, v.height, v.depth, v.spacing);

  auto bytes = detail::read_all(detail::raw_path_for(sidecar));
  require(bytes.size() == v.voxel_count() * sizeof(float), "shape",
          "raw payload holds " + std::to_string(bytes.size() / sizeof(float)) +
              " values but sidecar declares " + std::to_string(v.voxel_count()));
  v.voxels.resize(v.voxel_count());
  std::memcpy(v.voxels.data(), bytes.data(), bytes.size());
  require(all_finite(v.voxels), "value", "volume contains non-finite intensities");
  return v;
}

inline void save_labels(const LabelVolume& lv, const std::filesystem::path& sidecar) {
  validate(lv);
  nlohmann::json j{{"width", lv.width},
                   {"height", lv.height},
                   {"depth", lv.depth},
                   {"spacing", {lv.spacing[0], lv.spacing[1], lv.spacing[2]}},
                   {"dtype", "u8"}};
  std::string text = j.dump(2);
  text.push_back('\n');
  detail::write_all(sidecar, text.data(), text.size());
  detail::write_all(detail::raw_path_for(sidecar), lv.labels.data(), lv.labels.size());
}

inline LabelVolume load_labels(const std::filesystem::path& sidecar) {
  nlohmann::json j = detail::load_sidecar(sidecar, "u8");
  LabelVolume lv;
  lv.width = j["width"].get<int>();
  lv.height = j["height"].get<int>();
  lv.depth = j["depth"].get<int>();
  for (int i = 0; i < 3; ++i) lv.spacing[i] = j["spacing"][i].get<double>();
  detail::check_dims(lv.width, lv.height, lv.depth, lv.spacing);

  auto bytes = detail::read_all(detail::raw_path_for(sidecar));
  require(bytes.size() == lv.voxel_count(), "shape",
          "raw payload holds " + std::to_string(bytes.size()) + " values but sidecar declares " +
              std::to_string(lv.voxel_count()));
  lv.labels.assign(bytes.begin(), bytes.end());
  validate(lv);
  return lv;
}

/// Min-max rescale over all voxels of the volume. A constant volume maps to
/// all zeros; otherwise the output spans [0, 1] exactly.
inline std::pair<Volume, NormalizationRecord> normalize(const Volume& v) {
  validate(v);
  auto [mn_it, mx_it] = std::minmax_element(v.voxels.begin(), v.voxels.end());
  NormalizationRecord rec{*mn_it, *mx_it};
  Volume out = v;
  if (rec.max_value > rec.min_value) {
    const float lo = rec.min_value;
    const float range = rec.max_value - rec.min_value;
    for (float& x : out.voxels) x = (x - lo) / range;
  } else {
    std::fill(out.voxels.begin(), out.voxels.end(), 0.0f);
  }
  return {std::move(out), rec};
}

/// Neighbor stack for slice `i`: slices i-k .. i+k with indices clamped to
/// [0, depth), so edge slices replicate their nearest valid neighbor.
inline SliceGroup slice_group(const Volume& v_normalized, int i, int k) {
  validate(v_normalized);
  require(k >= 0, "config", "neighborhood radius must be >= 0");
  require(i >= 0 && i < v_normalized.depth,
          "shape", "slice index " + std::to_string(i) + " outside [0, " +
                       std::to_string(v_normalized.depth) + ")");
  for (float x : v_normalized.voxels)
    require(x >= 0.0f && x <= 1.0f, "value", "slice_group input must be normalized to [0, 1]");

  SliceGroup g;
  g.center_index = i;
  g.k = k;
  g.width = v_normalized.width;
  g.height = v_normalized.height;
  g.channels.resize(static_cast<size_t>(2 * k + 1) * v_normalized.slice_size());
  for (int c = 0; c < 2 * k + 1; ++c) {
    int z = std::clamp(i - k + c, 0, v_normalized.depth - 1);
    std::copy_n(v_normalized.slice(z), v_normalized.slice_size(),
                g.channels.begin() + static_cast<size_t>(c) * v_normalized.slice_size());
  }
  return g;
}

}  // namespace advseg
