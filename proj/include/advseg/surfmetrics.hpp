#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "advseg/core.hpp"
#include "advseg/volume.hpp"

namespace advseg {

/// Millimeter-space point of a boundary voxel center.
struct SurfacePoint {
  double x, y, z;
};

/// Foreground voxels with at least one 6-neighbor that is background or
/// outside the grid, as voxel centers scaled by spacing.
inline std::vector<SurfacePoint> boundary_points(const LabelVolume& mask) {
  validate(mask);
  const int W = mask.width, H = mask.height, D = mask.depth;
  std::vector<SurfacePoint> pts;
  size_t idx = 0;
  auto fg = [&](int x, int y, int z) {
    if (x < 0 || x >= W || y < 0 || y >= H || z < 0 || z >= D) return false;
    return mask.labels[(static_cast<size_t>(z) * H + y) * W + x] != 0;
  };
  for (int z = 0; z < D; ++z)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x, ++idx) {
        if (!mask.labels[idx]) continue;
        bool exposed = !fg(x - 1, y, z) || !fg(x + 1, y, z) || !fg(x, y - 1, z) ||
                       !fg(x, y + 1, z) || !fg(x, y, z - 1) || !fg(x, y, z + 1);
        if (exposed)
          pts.push_back({x * mask.spacing[0], y * mask.spacing[1], z * mask.spacing[2]});
      }
  return pts;
}

namespace detail {

inline double dist2(const SurfacePoint& a, const SurfacePoint& b) {
  double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

/// Uniform-grid index over a point set for exact nearest-neighbor queries.
/// Cells are cubes in millimeter space; a query expands Chebyshev rings of
/// cells until no unvisited ring can beat the best distance found, which
/// makes the result equal to a full scan.
class PointGrid {
 public:
  PointGrid(const std::vector<SurfacePoint>& pts, double cell) : pts_(pts), cell_(cell) {
    lo_ = {pts[0].x, pts[0].y, pts[0].z};
    std::array<double, 3> hi = lo_;
    for (const auto& p : pts) {
      lo_[0] = std::min(lo_[0], p.x); hi[0] = std::max(hi[0], p.x);
      lo_[1] = std::min(lo_[1], p.y); hi[1] = std::max(hi[1], p.y);
      lo_[2] = std::min(lo_[2], p.z); hi[2] = std::max(hi[2], p.z);
    }
    for (int a = 0; a < 3; ++a)
      dims_[a] = static_cast<int>((hi[a] - lo_[a]) / cell_) + 1;
    buckets_.resize(static_cast<size_t>(dims_[0]) * dims_[1] * dims_[2]);
    for (size_t i = 0; i < pts.size(); ++i)
      buckets_[bucket_of(pts[i])].push_back(static_cast<int>(i));
  }

  double nearest_distance(const SurfacePoint& q) const {
    int cx = clamp_cell(static_cast<int>(std::floor((q.x - lo_[0]) / cell_)), 0);
    int cy = clamp_cell(static_cast<int>(std::floor((q.y - lo_[1]) / cell_)), 1);
    int cz = clamp_cell(static_cast<int>(std::floor((q.z - lo_[2]) / cell_)), 2);
    int max_ring = std::max({dims_[0], dims_[1], dims_[2],
                             cx + 1, dims_[0] - cx, cy + 1, dims_[1] - cy,
                             cz + 1, dims_[2] - cz});
    double best2 = std::numeric_limits<double>::infinity();
    for (int ring = 0; ring < max_ring; ++ring) {
      // Every point in ring r lies at least (r-1) full cells away.
      double bound = (ring - 1) * cell_;
      if (ring > 0 && best2 <= bound * bound) break;
      scan_ring(q, cx, cy, cz, ring, best2);
    }
    return std::sqrt(best2);
  }

 private:
  int clamp_cell(int c, int axis) const { return std::clamp(c, 0, dims_[axis] - 1); }

  size_t bucket_of(const SurfacePoint& p) const {
    int x = clamp_cell(static_cast<int>(std::floor((p.x - lo_[0]) / cell_)), 0);
    int y = clamp_cell(static_cast<int>(std::floor((p.y - lo_[1]) / cell_)), 1);
    int z = clamp_cell(static_cast<int>(std::floor((p.z - lo_[2]) / cell_)), 2);
    return (static_cast<size_t>(z) * dims_[1] + y) * dims_[0] + x;
  }

  void scan_cell(const SurfacePoint& q, int x, int y, int z, double& best2) const {
    if (x < 0 || x >= dims_[0] || y < 0 || y >= dims_[1] || z < 0 || z >= dims_[2]) return;
    for (int i : buckets_[(static_cast<size_t>(z) * dims_[1] + y) * dims_[0] + x])
      best2 = std::min(best2, dist2(q, pts_[i]));
  }

  void scan_ring(const SurfacePoint& q, int cx, int cy, int cz, int ring, double& best2) const {
    if (ring == 0) {
      scan_cell(q, cx, cy, cz, best2);
      return;
    }
    for (int dz = -ring; dz <= ring; ++dz)
      for (int dy = -ring; dy <= ring; ++dy)
        for (int dx = -ring; dx <= ring; ++dx) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
          scan_cell(q, cx + dx, cy + dy, cz + dz, best2);
        }
  }

  const std::vector<SurfacePoint>& pts_;
  double cell_;
  std::array<double, 3> lo_;
  std::array<int, 3> dims_;
  std::vector<std::vector<int>> buckets_;
};

}  // namespace detail

/// For every boundary point of `a` the distance to the nearest boundary point
/// of `b`, followed by the reverse direction. Anisotropic Euclidean, exact.
inline std::vector<double> symmetric_surface_distances(const LabelVolume& a,
                                                       const LabelVolume& b) {
  require(a.width == b.width && a.height == b.height && a.depth == b.depth, "shape",
          "mask dimensions differ");
  require(a.spacing == b.spacing, "shape", "mask spacings differ");
  auto pa = boundary_points(a);
  auto pb = boundary_points(b);
  require(!pa.empty() && !pb.empty(), "value", "surface distances need two nonempty masks");

  double cell = std::max({a.spacing[0], a.spacing[1], a.spacing[2]});
  detail::PointGrid ga(pa, cell);
  detail::PointGrid gb(pb, cell);
  std::vector<double> out;
  out.reserve(pa.size() + pb.size());
  for (const auto& p : pa) out.push_back(gb.nearest_distance(p));
  for (const auto& p : pb) out.push_back(ga.nearest_distance(p));
  return out;
}

struct DistanceStats {
  double assd = 0.0, rmssd = 0.0, mssd = 0.0;
};

inline DistanceStats distance_stats(const std::vector<double>& distances) {
  require(!distances.empty(), "value", "distance multiset is empty");
  DistanceStats s;
  double sum = 0.0, sum2 = 0.0;
  for (double d : distances) {
    sum += d;
    sum2 += d * d;
    s.mssd = std::max(s.mssd, d);
  }
  s.assd = sum / static_cast<double>(distances.size());
  s.rmssd = std::sqrt(sum2 / static_cast<double>(distances.size()));
  return s;
}

/// 100 * (1 - |A∩B| / |A∪B|), in percent.
inline double volumetric_overlap_error(const LabelVolume& a, const LabelVolume& b) {
  require(a.width == b.width && a.height == b.height && a.depth == b.depth, "shape",
          "mask dimensions differ");
  size_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.labels.size(); ++i) {
    inter += (a.labels[i] & b.labels[i]);
    uni += (a.labels[i] | b.labels[i]);
  }
  require(uni > 0, "value", "volumetric overlap undefined for two empty masks");
  return 100.0 * (1.0 - static_cast<double>(inter) / static_cast<double>(uni));
}

/// 100 * ||A| - |B|| / |B|, in percent; b is the reference.
inline double relative_absolute_volume_difference(const LabelVolume& a, const LabelVolume& b) {
  size_t na = a.foreground_count();
  size_t nb = b.foreground_count();
  require(nb > 0, "value", "relative volume difference needs a nonempty reference");
  double diff = std::abs(static_cast<double>(na) - static_cast<double>(nb));
  return 100.0 * diff / static_cast<double>(nb);
}

/// Debug extra; not part of the five-metric report.
inline double dice_coefficient(const LabelVolume& a, const LabelVolume& b) {
  size_t inter = 0, total = 0;
  for (size_t i = 0; i < a.labels.size(); ++i) {
    inter += (a.labels[i] & b.labels[i]);
    total += a.labels[i] + b.labels[i];
  }
  require(total > 0, "value", "dice undefined for two empty masks");
  return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

/// Metric magnitude that maps to a score of 75 points, per metric.
struct ScoreMapping {
  double voe = 6.4;    // percent
  double ravd = 4.7;   // percent
  double assd = 1.0;   // mm
  double rmssd = 1.8;  // mm
  double mssd = 19.0;  // mm
};

/// 100 points at metric 0, 75 at the reference magnitude, clamped at 0.
inline double challenge_score(double metric, double reference) {
  require(reference > 0.0, "config", "score reference must be positive");
  return std::max(0.0, 100.0 - 25.0 * metric / reference);
}

struct MetricReport {
  double voe = 0.0, ravd = 0.0, assd = 0.0, rmssd = 0.0, mssd = 0.0;
  double score_voe = 0.0, score_ravd = 0.0, score_assd = 0.0, score_rmssd = 0.0,
         score_mssd = 0.0;
  double mean_score = 0.0;
};

/// Full five-metric report for (prediction, reference). An empty prediction
/// against a nonempty reference yields infinite surface distances, whose
/// scores clamp to 0, so the report is always total.
inline MetricReport evaluate_pair(const LabelVolume& pred, const LabelVolume& ref,
                                  const ScoreMapping& mapping = {}) {
  require(ref.foreground_count() > 0, "value", "reference mask is empty");
  MetricReport r;
  r.voe = volumetric_overlap_error(pred, ref);
  r.ravd = relative_absolute_volume_difference(pred, ref);
  if (pred.foreground_count() > 0) {
    DistanceStats s = distance_stats(symmetric_surface_distances(pred, ref));
    r.assd = s.assd;
    r.rmssd = s.rmssd;
    r.mssd = s.mssd;
  } else {
    r.assd = r.rmssd = r.mssd = std::numeric_limits<double>::infinity();
  }
  r.score_voe = challenge_score(r.voe, mapping.voe);
  r.score_ravd = challenge_score(r.ravd, mapping.ravd);
  r.score_assd = challenge_score(r.assd, mapping.assd);
  r.score_rmssd = challenge_score(r.rmssd, mapping.rmssd);
  r.score_mssd = challenge_score(r.mssd, mapping.mssd);
  r.mean_score = (r.score_voe + r.score_ravd + r.score_assd + r.score_rmssd + r.score_mssd) / 5.0;
  return r;
}

}  // namespace advseg
