#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "advseg/core.hpp"
#include "advseg/volume.hpp"

namespace advseg {

/// Voxel adjacency. The 2D variants connect only within a z-slice.
enum class Connectivity { d2_4, d2_8, d3_6, d3_26 };

inline const char* to_string(Connectivity c) {
  switch (c) {
    case Connectivity::d2_4: return "2d-4";
    case Connectivity::d2_8: return "2d-8";
    case Connectivity::d3_6: return "3d-6";
    case Connectivity::d3_26: return "3d-26";
  }
  return "?";
}

inline bool is_2d(Connectivity c) {
  return c == Connectivity::d2_4 || c == Connectivity::d2_8;
}

/// Component ids are assigned in (z, y, x) scan order of first encounter,
/// so id 1 is always the component containing the first foreground voxel.
struct ComponentLabeling {
  int width = 0, height = 0, depth = 0;
  Connectivity connectivity = Connectivity::d3_26;
  std::vector<int32_t> label;          // 0 = background, 1..count
  std::vector<size_t> component_sizes; // indexed by id-1

  int count() const { return static_cast<int>(component_sizes.size()); }
};

namespace detail {

struct Offset3 {
  int dz, dy, dx;
};

/// Neighbor offsets that precede the current voxel in (z, y, x) scan order.
inline std::vector<Offset3> prior_offsets(Connectivity c) {
  switch (c) {
    case Connectivity::d2_4:
      return {{0, -1, 0}, {0, 0, -1}};
    case Connectivity::d2_8:
      return {{0, -1, -1}, {0, -1, 0}, {0, -1, 1}, {0, 0, -1}};
    case Connectivity::d3_6:
      return {{-1, 0, 0}, {0, -1, 0}, {0, 0, -1}};
    case Connectivity::d3_26: {
      std::vector<Offset3> out;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) out.push_back({-1, dy, dx});
      for (int dx = -1; dx <= 1; ++dx) out.push_back({0, -1, dx});
      out.push_back({0, 0, -1});
      return out;
    }
  }
  return {};
}

class UnionFind {
 public:
  explicit UnionFind(size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), size_t{0});
  }
  size_t find(size_t a) {
    while (parent_[a] != a) {
      parent_[a] = parent_[parent_[a]];
      a = parent_[a];
    }
    return a;
  }
  void unite(size_t a, size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<size_t> parent_;
};

}  // namespace detail

/// Exact connected-component labeling by union-find over scan-order neighbor
/// merges, then a relabeling pass that numbers roots in first-encounter order.
inline ComponentLabeling connected_components(const LabelVolume& mask, Connectivity conn) {
  validate(mask);
  const int W = mask.width, H = mask.height, D = mask.depth;
  const auto offsets = detail::prior_offsets(conn);
  const size_t total = mask.voxel_count();

  detail::UnionFind uf(total);
  size_t idx = 0;
  for (int z = 0; z < D; ++z)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x, ++idx) {
        if (!mask.labels[idx]) continue;
        for (const auto& o : offsets) {
          int nz = z + o.dz, ny = y + o.dy, nx = x + o.dx;
          if (nz < 0 || ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
          size_t nidx = (static_cast<size_t>(nz) * H + ny) * W + nx;
          if (mask.labels[nidx]) uf.unite(idx, nidx);
        }
      }

  ComponentLabeling out;
  out.width = W;
  out.height = H;
  out.depth = D;
  out.connectivity = conn;
  out.label.assign(total, 0);
  std::vector<int32_t> root_id(total, 0);
  for (size_t i = 0; i < total; ++i) {
    if (!mask.labels[i]) continue;
    size_t r = uf.find(i);
    if (root_id[r] == 0) {
      out.component_sizes.push_back(0);
      root_id[r] = static_cast<int32_t>(out.component_sizes.size());
    }
    out.label[i] = root_id[r];
    ++out.component_sizes[root_id[r] - 1];
  }
  return out;
}

namespace detail {

/// Id of the largest component; ties go to the smaller id, i.e. the earliest
/// first-encounter scan position. 0 when there are no components.
inline int32_t largest_component_id(const ComponentLabeling& cl) {
  int32_t best = 0;
  size_t best_size = 0;
  for (int32_t id = 1; id <= cl.count(); ++id) {
    size_t sz = cl.component_sizes[id - 1];
    if (sz > best_size) {
      best_size = sz;
      best = id;
    }
  }
  return best;
}

}  // namespace detail

/// Keep only the largest 3D component of the mask. Empty in, empty out.
inline LabelVolume largest_component_filter_3d(const LabelVolume& mask,
                                               Connectivity conn = Connectivity::d3_26) {
  require(!is_2d(conn), "config", "3D filter needs a 3D connectivity");
  ComponentLabeling cl = connected_components(mask, conn);
  int32_t keep = detail::largest_component_id(cl);
  LabelVolume out = mask;
  for (size_t i = 0; i < out.labels.size(); ++i)
    out.labels[i] = (cl.label[i] == keep && keep != 0) ? 1 : 0;
  return out;
}

/// Keep the largest component of each z-slice independently.
inline LabelVolume largest_component_filter_2d(const LabelVolume& mask,
                                               Connectivity conn = Connectivity::d2_8) {
  require(is_2d(conn), "config", "2D filter needs a 2D connectivity");
  validate(mask);
  LabelVolume out = mask;
  LabelVolume one_slice;
  one_slice.width = mask.width;
  one_slice.height = mask.height;
  one_slice.depth = 1;
  one_slice.spacing = mask.spacing;
  for (int z = 0; z < mask.depth; ++z) {
    one_slice.labels.assign(mask.slice(z), mask.slice(z) + mask.slice_size());
    ComponentLabeling cl = connected_components(one_slice, conn);
    int32_t keep = detail::largest_component_id(cl);
    uint8_t* dst = out.slice(z);
    for (size_t i = 0; i < mask.slice_size(); ++i)
      dst[i] = (cl.label[i] == keep && keep != 0) ? 1 : 0;
  }
  return out;
}

}  // namespace advseg
