#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "advseg/core.hpp"
#include "advseg/rng.hpp"
#include "advseg/volume.hpp"

namespace advseg {

/// Synthetic single-organ volume: a seed-perturbed ellipsoid mask plus an
/// intensity image with optional multiplicative bias field and additive noise.
struct PhantomSpec {
  int width = 64, height = 64, depth = 24;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<double, 3> organ_axes{18.0, 14.0, 8.0};  // semi-axes in voxels (x, y, z)
  float intensity_fg = 180.0f;
  float intensity_bg = 100.0f;
  float noise_sigma = 0.0f;
  float bias_amplitude = 0.0f;
  uint64_t seed = 0;
};

namespace detail {

/// Direction-dependent radius factor: low-order polynomial modulation on the
/// unit sphere with seed-drawn coefficients, clamped so the mask stays
/// star-shaped (hence connected) around the center.
struct RadialPerturbation {
  std::array<double, 6> coef{};

  explicit RadialPerturbation(Rng& rng) {
    for (double& c : coef) c = 0.05 * (2.0 * rng.uniform() - 1.0);
  }

  double factor(double ux, double uy, double uz) const {
    double m = coef[0] * ux * uy + coef[1] * uy * uz + coef[2] * ux * uz +
               coef[3] * (ux * ux - uy * uy) + coef[4] * (3.0 * uz * uz - 1.0) +
               coef[5] * ux * uy * uz;
    return std::clamp(1.0 + m, 0.75, 1.3);
  }
};

}  // namespace detail

inline std::pair<Volume, LabelVolume> make_phantom(const PhantomSpec& spec) {
  detail::check_dims(spec.width, spec.height, spec.depth, spec.spacing);
  require(spec.noise_sigma >= 0.0f, "config", "noise_sigma must be >= 0");
  require(spec.bias_amplitude >= 0.0f && spec.bias_amplitude < 1.0f, "config",
          "bias_amplitude must be in [0, 1)");
  const double cx = (spec.width - 1) / 2.0;
  const double cy = (spec.height - 1) / 2.0;
  const double cz = (spec.depth - 1) / 2.0;
  for (int a = 0; a < 3; ++a)
    require(spec.organ_axes[a] > 0.0, "config", "organ semi-axes must be positive");
  // The perturbed radius can reach 1.3x the nominal semi-axis.
  require(1.3 * spec.organ_axes[0] <= cx + 0.5 && 1.3 * spec.organ_axes[1] <= cy + 0.5 &&
              1.3 * spec.organ_axes[2] <= cz + 0.5,
          "config", "organ ellipsoid does not fit inside the volume");

  Rng shape_rng = Rng(spec.seed).fork("phantom-shape");
  Rng noise_rng = Rng(spec.seed).fork("phantom-noise");
  Rng bias_rng = Rng(spec.seed).fork("phantom-bias");
  detail::RadialPerturbation perturb(shape_rng);
  std::array<double, 3> phase{2.0 * std::numbers::pi * bias_rng.uniform(),
                              2.0 * std::numbers::pi * bias_rng.uniform(),
                              2.0 * std::numbers::pi * bias_rng.uniform()};

  LabelVolume mask;
  mask.width = spec.width;
  mask.height = spec.height;
  mask.depth = spec.depth;
  mask.spacing = spec.spacing;
  mask.labels.resize(mask.voxel_count());

  Volume vol;
  vol.width = spec.width;
  vol.height = spec.height;
  vol.depth = spec.depth;
  vol.spacing = spec.spacing;
  vol.voxels.resize(vol.voxel_count());

  size_t idx = 0;
  for (int z = 0; z < spec.depth; ++z)
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x, ++idx) {
        double ex = (x - cx) / spec.organ_axes[0];
        double ey = (y - cy) / spec.organ_axes[1];
        double ez = (z - cz) / spec.organ_axes[2];
        double q = ex * ex + ey * ey + ez * ez;
        bool inside;
        if (q == 0.0) {
          inside = true;
        } else {
          double norm = std::sqrt(q);
          double rho = perturb.factor(ex / norm, ey / norm, ez / norm);
          inside = q <= rho * rho;
        }
        mask.labels[idx] = inside ? 1 : 0;

        float intensity = inside ? spec.intensity_fg : spec.intensity_bg;
        if (spec.bias_amplitude > 0.0f) {
          double b = 1.0 + spec.bias_amplitude *
                               std::sin(2.0 * std::numbers::pi * x / spec.width + phase[0]) *
                               std::sin(2.0 * std::numbers::pi * y / spec.height + phase[1]) *
                               std::sin(2.0 * std::numbers::pi * z / spec.depth + phase[2]);
          intensity = static_cast<float>(intensity * b);
        }
        if (spec.noise_sigma > 0.0f)
          intensity += static_cast<float>(spec.noise_sigma * noise_rng.normal());
        vol.voxels[idx] = intensity;
      }
  return {std::move(vol), std::move(mask)};
}

/// Add `n_speckles` spherical false-positive blobs that stay disconnected
/// from the true mask (and from each other) under 26-adjacency. True
/// foreground is never removed. Deterministic in the seed.
inline LabelVolume corrupt_prediction(const LabelVolume& lv, int n_speckles, int speckle_radius,
                                      uint64_t seed) {
  validate(lv);
  require(n_speckles >= 0, "config", "speckle count must be >= 0");
  require(speckle_radius >= 1 || n_speckles == 0, "config", "speckle radius must be >= 1");
  LabelVolume out = lv;
  if (n_speckles == 0) return out;

  const int W = lv.width, H = lv.height, D = lv.depth, r = speckle_radius;
  require(W > 2 * r && H > 2 * r && D > 2 * r, "config",
          "volume too small for speckles of radius " + std::to_string(r));
  Rng rng = Rng(seed).fork("speckle");
  auto occupied = [&](int x, int y, int z) {
    if (x < 0 || x >= W || y < 0 || y >= H || z < 0 || z >= D) return false;
    return out.labels[(static_cast<size_t>(z) * H + y) * W + x] != 0;
  };

  for (int s = 0; s < n_speckles; ++s) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      int bx = rng.range(r, W - 1 - r);
      int by = rng.range(r, H - 1 - r);
      int bz = rng.range(r, D - 1 - r);
      // The ball dilated by one 26-step must be free, so the blob cannot
      // touch existing foreground under any supported connectivity.
      bool clear = true;
      for (int dz = -r - 1; dz <= r + 1 && clear; ++dz)
        for (int dy = -r - 1; dy <= r + 1 && clear; ++dy)
          for (int dx = -r - 1; dx <= r + 1 && clear; ++dx) {
            int cheb = std::max({std::abs(dx), std::abs(dy), std::abs(dz)});
            double nearest = std::max(0, cheb - 1);
            if (nearest * nearest > static_cast<double>(r) * r) continue;
            if (occupied(bx + dx, by + dy, bz + dz)) clear = false;
          }
      if (!clear) continue;
      for (int dz = -r; dz <= r; ++dz)
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            if (dx * dx + dy * dy + dz * dz <= r * r)
              out.labels[(static_cast<size_t>(bz + dz) * H + (by + dy)) * W + (bx + dx)] = 1;
      placed = true;
    }
    require(placed, "value",
            "could not place speckle " + std::to_string(s + 1) + " after bounded retries");
  }
  return out;
}

}  // namespace advseg
