#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "voxloc/geometry.hpp"
#include "voxloc/image.hpp"
#include "voxloc/parallel.hpp"
#include "voxloc/radiance_field.hpp"
#include "voxloc/random.hpp"

namespace voxloc {

/// Quadrature settings for one ray. The [t_near, t_far] window is further
/// clipped to the grid bbox per ray; n_samples bins span the clipped range.
struct RaySamplingConfig {
  double t_near = 0.0;
  double t_far = 1e9;
  int n_samples = 128;
  bool stratified = false;  // jitter sample positions within bins
};

inline void validate(const RaySamplingConfig& cfg) {
  if (!(cfg.t_near >= 0.0) || !(cfg.t_near < cfg.t_far))
    throw std::invalid_argument("sampling config requires 0 <= t_near < t_far");
  if (cfg.n_samples < 1) throw std::invalid_argument("sampling config requires n_samples >= 1");
}

namespace detail {

// Slab intersection of a ray with the grid bbox; empty optional on a miss.
inline std::optional<std::pair<double, double>> intersect_bbox(const VoxelGrid& grid,
                                                               const Ray& ray) {
  double t0 = 0.0;
  double t1 = 1e300;
  const double lo[3] = {grid.bbox_min.x, grid.bbox_min.y, grid.bbox_min.z};
  const double hi[3] = {grid.bbox_max.x, grid.bbox_max.y, grid.bbox_max.z};
  const double o[3] = {ray.origin.x, ray.origin.y, ray.origin.z};
  const double d[3] = {ray.direction.x, ray.direction.y, ray.direction.z};
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-300) {
      if (o[a] < lo[a] || o[a] > hi[a]) return std::nullopt;
      continue;
    }
    double ta = (lo[a] - o[a]) / d[a];
    double tb = (hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  return std::make_pair(t0, t1);
}

// Sample depths plus per-sample deltas. Bin midpoints by default, jittered
// within bins when stratified; the last delta equals the bin width.
inline int plan_samples(const VoxelGrid& grid, const Ray& ray, const RaySamplingConfig& cfg,
                        Rng* rng, std::vector<double>& ts, std::vector<double>& deltas) {
  const auto hit = intersect_bbox(grid, ray);
  if (!hit) return 0;
  const double lo = std::max(cfg.t_near, hit->first);
  const double hi = std::min(cfg.t_far, hit->second);
  if (!(lo < hi)) return 0;
  const int n = cfg.n_samples;
  const double bin = (hi - lo) / n;
  ts.resize(n);
  deltas.resize(n);
  if (cfg.stratified) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int k = 0; k < n; ++k) ts[k] = lo + (k + u01(*rng)) * bin;
  } else {
    for (int k = 0; k < n; ++k) ts[k] = lo + (k + 0.5) * bin;
  }
  for (int k = 0; k + 1 < n; ++k) deltas[k] = ts[k + 1] - ts[k];
  deltas[n - 1] = bin;
  return n;
}

}  // namespace detail

// Quadrature compositing along one ray: alpha_k = 1 - exp(-sigma_k * delta_k),
// transmittance by running product, color = sum T_k * alpha_k * c_k.
inline Rgb render_ray(const VoxelGrid& grid, const Ray& ray, const RaySamplingConfig& cfg,
                      Rng* rng = nullptr) {
  validate(cfg);
  if (cfg.stratified && rng == nullptr)
    throw std::invalid_argument("render_ray: stratified sampling requires an rng");
  std::vector<double> ts, deltas;
  const int n = detail::plan_samples(grid, ray, cfg, rng, ts, deltas);
  Rgb out;
  double transmittance = 1.0;
  for (int k = 0; k < n; ++k) {
    const Vec3 p = ray.origin + ray.direction * ts[k];
    const FieldSample s = sample_field(grid, p, ray.direction);
    if (s.sigma <= 0.0) continue;
    const double alpha = 1.0 - std::exp(-s.sigma * deltas[k]);
    const double w = transmittance * alpha;
    out.r += w * s.rgb.r;
    out.g += w * s.rgb.g;
    out.b += w * s.rgb.b;
    transmittance *= 1.0 - alpha;
    if (transmittance < 1e-14) break;
  }
  out.r = std::clamp(out.r, 0.0, 1.0);
  out.g = std::clamp(out.g, 0.0, 1.0);
  out.b = std::clamp(out.b, 0.0, 1.0);
  return out;
}

// Renders a pixel subset. Output order matches input order, and results are
// independent of the worker count (per-pixel depth jitter derives from one
// base draw, never from a shared stream).
inline std::vector<PixelSample> render_pixels(const VoxelGrid& grid, const Pose& pose,
                                              const CameraIntrinsics& intr,
                                              std::span<const PixelCoord> coords,
                                              const RaySamplingConfig& cfg, Rng* rng = nullptr,
                                              int workers = 1) {
  validate(cfg);
  if (cfg.stratified && rng == nullptr)
    throw std::invalid_argument("render_pixels: stratified sampling requires an rng");
  for (const PixelCoord& px : coords) {
    if (px.x < 0 || px.x >= intr.width || px.y < 0 || px.y >= intr.height)
      throw std::invalid_argument("render_pixels: pixel outside raster");
  }
  const std::uint64_t base = cfg.stratified ? (*rng)() : 0;
  std::vector<PixelSample> out(coords.size());
  parallel_for(coords.size(), workers, [&](std::size_t i) {
    const Ray ray = ray_for_pixel(intr, pose, coords[i]);
    if (cfg.stratified) {
      Rng local = make_rng(derive_seed(base, i));
      out[i] = {coords[i], render_ray(grid, ray, cfg, &local)};
    } else {
      out[i] = {coords[i], render_ray(grid, ray, cfg)};
    }
  });
  return out;
}

inline Image render_image(const VoxelGrid& grid, const Pose& pose, const CameraIntrinsics& intr,
                          const RaySamplingConfig& cfg, Rng* rng = nullptr, int workers = 1) {
  validate(intr);
  std::vector<PixelCoord> coords;
  coords.reserve(static_cast<std::size_t>(intr.width) * intr.height);
  for (int y = 0; y < intr.height; ++y)
    for (int x = 0; x < intr.width; ++x) coords.push_back({x, y});
  const auto samples = render_pixels(grid, pose, intr, coords, cfg, rng, workers);
  Image img = Image::black(intr.width, intr.height);
  for (const PixelSample& s : samples) img.set(s.coordinate.x, s.coordinate.y, s.color);
  return img;
}

}  // namespace voxloc
