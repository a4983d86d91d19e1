#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxloc/geometry.hpp"
#include "voxloc/image.hpp"
#include "voxloc/parallel.hpp"
#include "voxloc/radiance_field.hpp"
#include "voxloc/renderer.hpp"

namespace voxloc {

inline double softplus(double z) { return z > 30.0 ? z : std::log1p(std::exp(z)); }
inline double inv_softplus(double sigma) {
  return sigma > 30.0 ? sigma : std::log(std::expm1(sigma));
}

/// Posed images sharing one pinhole model.
struct TrainSet {
  std::vector<Image> images;
  std::vector<Pose> poses;
  CameraIntrinsics intrinsics;
};

inline void validate(const TrainSet& train) {
  if (train.images.empty()) throw std::invalid_argument("train set must be nonempty");
  if (train.images.size() != train.poses.size())
    throw std::invalid_argument("train set image and pose counts differ");
  validate(train.intrinsics);
  for (const Image& img : train.images)
    if (img.width != train.intrinsics.width || img.height != train.intrinsics.height)
      throw std::invalid_argument("train set images must all match the intrinsics raster");
}

struct FitConfig {
  int iterations = 2000;
  int rays_per_step = 1024;
  double step_size = 2.0;
  double step_decay = 0.9988;  // geometric per-iteration factor
  int n_samples = 64;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct RayTarget {
  Ray ray;
  Rgb target;
};

/// Gradient of the photometric loss over every cell, in the optimizer's
/// parameterization: density through its softplus pre-activation, colors raw.
struct FieldGradient {
  std::vector<double> density_preact;
  std::vector<double> color;
};

// Batch loss of Eq.-style squared color residuals, rendered with
// deterministic midpoint sampling so the gradient check below is exact.
inline double photometric_loss(const VoxelGrid& grid, std::span<const RayTarget> batch,
                               const RaySamplingConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("photometric_loss: batch must be nonempty");
  RaySamplingConfig det = cfg;
  det.stratified = false;
  double loss = 0.0;
  for (const RayTarget& rt : batch) {
    const Rgb c = render_ray(grid, rt.ray, det);
    const double dr = c.r - rt.target.r;
    const double dg = c.g - rt.target.g;
    const double db = c.b - rt.target.b;
    loss += dr * dr + dg * dg + db * db;
  }
  return loss;
}

namespace detail {

struct GradBuffers {
  std::vector<double> sigma;  // dL/d(sigma_v), converted to pre-activation later
  std::vector<double> color;
  double loss = 0.0;

  void resize_zero(std::size_t cells) {
    sigma.assign(cells, 0.0);
    color.assign(3 * cells, 0.0);
    loss = 0.0;
  }
};

// Forward-then-backward pass for one ray, accumulating into `out`.
// Mirrors render_ray sample placement and early termination exactly.
inline void accumulate_ray_gradient(const VoxelGrid& grid, const RayTarget& rt,
                                    const RaySamplingConfig& cfg, GradBuffers& out) {
  std::vector<double> ts, deltas;
  const int n = plan_samples(grid, rt.ray, cfg, nullptr, ts, deltas);

  struct SampleRec {
    TrilinearStencil stencil;
    double sigma;
    Rgb color;
    double alpha;
    double transmittance;
  };
  static thread_local std::vector<SampleRec> recs;
  recs.clear();

  Rgb rendered;
  double transmittance = 1.0;
  for (int k = 0; k < n; ++k) {
    const Vec3 p = rt.ray.origin + rt.ray.direction * ts[k];
    const TrilinearStencil st = trilinear_stencil(grid, p);
    double sigma = 0.0;
    Rgb c;
    for (int i = 0; i < st.count; ++i) {
      const double w = st.weight[i];
      const std::size_t cell = st.cell[i];
      sigma += w * grid.density[cell];
      c.r += w * grid.color[3 * cell + 0];
      c.g += w * grid.color[3 * cell + 1];
      c.b += w * grid.color[3 * cell + 2];
    }
    const double alpha = sigma > 0.0 ? 1.0 - std::exp(-sigma * deltas[k]) : 0.0;
    const double w = transmittance * alpha;
    rendered.r += w * c.r;
    rendered.g += w * c.g;
    rendered.b += w * c.b;
    recs.push_back({st, sigma, c, alpha, transmittance});
    transmittance *= 1.0 - alpha;
    if (transmittance < 1e-14) break;
  }

  const double gr = 2.0 * (rendered.r - rt.target.r);
  const double gg = 2.0 * (rendered.g - rt.target.g);
  const double gb = 2.0 * (rendered.b - rt.target.b);
  out.loss += 0.25 * (gr * gr + gg * gg + gb * gb);

  // Backward over samples, keeping the suffix S = sum_{k>j} T_k alpha_k c_k.
  Rgb suffix;
  for (int j = static_cast<int>(recs.size()) - 1; j >= 0; --j) {
    const SampleRec& rec = recs[j];
    const double weight = rec.transmittance * rec.alpha;
    const double g_dot_c = gr * rec.color.r + gg * rec.color.g + gb * rec.color.b;
    const double g_dot_s = gr * suffix.r + gg * suffix.g + gb * suffix.b;
    const double dsigma =
        deltas[j] * (rec.transmittance * (1.0 - rec.alpha) * g_dot_c - g_dot_s);
    for (int i = 0; i < rec.stencil.count; ++i) {
      const double w8 = rec.stencil.weight[i];
      const std::size_t cell = rec.stencil.cell[i];
      out.sigma[cell] += w8 * dsigma;
      out.color[3 * cell + 0] += w8 * gr * weight;
      out.color[3 * cell + 1] += w8 * gg * weight;
      out.color[3 * cell + 2] += w8 * gb * weight;
    }
    suffix.r += weight * rec.color.r;
    suffix.g += weight * rec.color.g;
    suffix.b += weight * rec.color.b;
  }
}

}  // namespace detail

// Loss plus its exact gradient. Rays are processed in fixed-size blocks whose
// partial gradients merge in block order, so the result is bit-identical for
// any worker count.
inline std::pair<double, FieldGradient> loss_and_gradient(const VoxelGrid& grid,
                                                          std::span<const RayTarget> batch,
                                                          const RaySamplingConfig& cfg,
                                                          int workers = 1) {
  if (batch.empty()) throw std::invalid_argument("loss_gradient: batch must be nonempty");
  RaySamplingConfig det = cfg;
  det.stratified = false;
  validate(det);

  constexpr std::size_t kBlock = 64;
  const std::size_t n_blocks = (batch.size() + kBlock - 1) / kBlock;
  std::vector<detail::GradBuffers> partials(n_blocks);
  parallel_for(n_blocks, workers, [&](std::size_t b) {
    partials[b].resize_zero(grid.cell_count());
    const std::size_t lo = b * kBlock;
    const std::size_t hi = std::min(batch.size(), lo + kBlock);
    for (std::size_t i = lo; i < hi; ++i)
      detail::accumulate_ray_gradient(grid, batch[i], det, partials[b]);
  });

  double loss = 0.0;
  FieldGradient grad;
  grad.density_preact.assign(grid.cell_count(), 0.0);
  grad.color.assign(3 * grid.cell_count(), 0.0);
  for (const detail::GradBuffers& p : partials) {
    loss += p.loss;
    for (std::size_t v = 0; v < grad.density_preact.size(); ++v)
      grad.density_preact[v] += p.sigma[v];
    for (std::size_t c = 0; c < grad.color.size(); ++c) grad.color[c] += p.color[c];
  }
  // Chain through the softplus: d(sigma)/d(preact) = sigmoid(z) = 1 - exp(-sigma).
  for (std::size_t v = 0; v < grad.density_preact.size(); ++v)
    grad.density_preact[v] *= 1.0 - std::exp(-grid.density[v]);
  return {loss, std::move(grad)};
}

inline FieldGradient loss_gradient(const VoxelGrid& grid, std::span<const RayTarget> batch,
                                   const RaySamplingConfig& cfg, int workers = 1) {
  return loss_and_gradient(grid, batch, cfg, workers).second;
}

struct FitResult {
  VoxelGrid grid;
  std::vector<double> loss_trace;  // batch loss per iteration
};

// Plain SGD on softplus density pre-activations and clamped colors,
// initialized to thin uniform fog and mid-gray.
inline FitResult fit_field(const TrainSet& train, int nx, int ny, int nz, const Vec3& bbox_min,
                           const Vec3& bbox_max, const FitConfig& cfg) {
  validate(train);
  if (cfg.iterations < 0) throw std::invalid_argument("fit_field: iterations must be >= 0");
  if (cfg.rays_per_step < 1) throw std::invalid_argument("fit_field: rays_per_step must be >= 1");
  if (!(cfg.step_size > 0.0)) throw std::invalid_argument("fit_field: step_size must be positive");

  FitResult result;
  result.grid = make_grid(nx, ny, nz, bbox_min, bbox_max);
  const std::size_t cells = result.grid.cell_count();
  std::vector<double> preact(cells, -2.0);
  for (std::size_t v = 0; v < cells; ++v) result.grid.density[v] = softplus(preact[v]);
  for (auto& c : result.grid.color) c = 0.5;

  RaySamplingConfig sampling;
  sampling.n_samples = cfg.n_samples;

  Rng rng = make_rng(cfg.seed);
  std::uniform_int_distribution<int> pick_image(0, static_cast<int>(train.images.size()) - 1);
  std::uniform_int_distribution<int> pick_x(0, train.intrinsics.width - 1);
  std::uniform_int_distribution<int> pick_y(0, train.intrinsics.height - 1);

  double step = cfg.step_size;
  std::vector<RayTarget> batch(cfg.rays_per_step);
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    for (RayTarget& rt : batch) {
      const int img = pick_image(rng);
      const PixelCoord px{pick_x(rng), pick_y(rng)};
      rt.ray = ray_for_pixel(train.intrinsics, train.poses[img], px);
      rt.target = train.images[img].at(px.x, px.y);
    }
    auto [loss, grad] = loss_and_gradient(result.grid, batch, sampling, cfg.workers);
    if (!std::isfinite(loss))
      throw std::runtime_error("fit_field: loss diverged at iteration " + std::to_string(iter));
    result.loss_trace.push_back(loss);

    for (std::size_t v = 0; v < cells; ++v) {
      preact[v] -= step * grad.density_preact[v];
      result.grid.density[v] = softplus(preact[v]);
    }
    for (std::size_t c = 0; c < result.grid.color.size(); ++c) {
      result.grid.color[c] =
          std::clamp(result.grid.color[c] - step * grad.color[c], 0.0, 1.0);
    }
    step *= cfg.step_decay;
  }
  return result;
}

}  // namespace voxloc
