#pragma once

#include <cstring>
#include <filesystem>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "advseg/core.hpp"
#include "advseg/volume.hpp"

namespace advseg {

template <typename S>
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  bool trainable = true;  // running statistics are stored but not optimized
  std::vector<S> v;

  size_t count() const { return v.size(); }
};

/// Ordered collection of named tensors; construction order defines the
/// manifest order, the checkpoint payload order, and the optimizer order.
template <typename S>
struct ModelParams {
  std::vector<ParamTensor<S>> tensors;

  ParamTensor<S>& add(const std::string& name, std::vector<int> shape, bool trainable) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    require(index_.find(name) == index_.end(), "config", "duplicate tensor name " + name);
    index_[name] = tensors.size();
    tensors.push_back({name, std::move(shape), trainable, std::vector<S>(n, S(0))});
    return tensors.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "config", "unknown tensor " + name);
    return it->second;
  }

  ParamTensor<S>& get(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), "config", "unknown tensor " + name);
    return tensors[it->second];
  }
  const ParamTensor<S>& get(const std::string& name) const {
    return const_cast<ModelParams*>(this)->get(name);
  }

  size_t total_count(bool trainable_only = false) const {
    size_t n = 0;
    for (const auto& t : tensors)
      if (!trainable_only || t.trainable) n += t.count();
    return n;
  }

 private:
  std::unordered_map<std::string, size_t> index_;
};

/// Gradient payloads aligned index-for-index with ModelParams::tensors.
/// Non-trainable tensors carry empty gradients.
template <typename S>
struct Grads {
  std::vector<std::vector<S>> g;

  template <typename P>
  static Grads zeros_like(const ModelParams<P>& p) {
    Grads out;
    out.g.resize(p.tensors.size());
    for (size_t i = 0; i < p.tensors.size(); ++i)
      if (p.tensors[i].trainable) out.g[i].assign(p.tensors[i].count(), S(0));
    return out;
  }

  void accumulate(const Grads& other, S scale = S(1)) {
    require(g.size() == other.g.size(), "shape", "gradient layout mismatch");
    for (size_t i = 0; i < g.size(); ++i)
      for (size_t j = 0; j < g[i].size(); ++j) g[i][j] += scale * other.g[i][j];
  }
};

/// Checksum over the float32 image of every tensor payload in manifest order.
template <typename S>
uint64_t params_checksum(const ModelParams<S>& p) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& t : p.tensors) {
    for (S x : t.v) {
      float f = static_cast<float>(x);
      h = fnv1a64(&f, sizeof(f), h);
    }
  }
  return h;
}

/// Checkpoint: `<name>.json` sidecar carrying an arbitrary config object plus
/// the tensor manifest, and `<name>.raw` with the concatenated little-endian
/// float32 payloads in manifest order.
template <typename S>
void save_checkpoint(const ModelParams<S>& p, const nlohmann::json& config,
                     const std::filesystem::path& sidecar) {
  nlohmann::json manifest = nlohmann::json::array();
  std::vector<float> payload;
  payload.reserve(p.total_count());
  for (const auto& t : p.tensors) {
    manifest.push_back({{"name", t.name}, {"shape", t.shape}, {"trainable", t.trainable}});
    for (S x : t.v) payload.push_back(static_cast<float>(x));
  }
  nlohmann::json j{{"config", config}, {"tensors", manifest}};
  std::string text = j.dump(2);
  text.push_back('\n');
  detail::write_all(sidecar, text.data(), text.size());
  detail::write_all(detail::raw_path_for(sidecar), payload.data(), payload.size() * sizeof(float));
}

template <typename S>
std::pair<ModelParams<S>, nlohmann::json> load_checkpoint(const std::filesystem::path& sidecar) {
  auto bytes = detail::read_all(sidecar);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail("format", "bad checkpoint sidecar " + sidecar.string() + ": " + e.what());
  }
  require(j.contains("config") && j.contains("tensors"), "format",
          "checkpoint sidecar missing config/tensors");
  ModelParams<S> p;
  for (const auto& t : j["tensors"])
    p.add(t["name"].get<std::string>(), t["shape"].get<std::vector<int>>(),
          t["trainable"].get<bool>());
  auto raw = detail::read_all(detail::raw_path_for(sidecar));
  require(raw.size() == p.total_count() * sizeof(float), "shape",
          "checkpoint payload size mismatch for " + sidecar.string());
  size_t off = 0;
  for (auto& t : p.tensors) {
    for (size_t i = 0; i < t.count(); ++i) {
      float f;
      std::memcpy(&f, raw.data() + off, sizeof(float));
      off += sizeof(float);
      t.v[i] = static_cast<S>(f);
    }
  }
  return {std::move(p), j["config"]};
}

}  // namespace advseg
