#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxloc/geometry.hpp"
#include "voxloc/image.hpp"
#include "voxloc/parallel.hpp"
#include "voxloc/radiance_field.hpp"
#include "voxloc/renderer.hpp"

namespace voxloc {

/// Thrown when resampling faces an all-zero weight vector.
struct degenerate_weights_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Particle {
  Pose pose;
  double weight = 0.0;
};

enum class ResamplingScheme { multinomial, systematic };

struct FilterConfig {
  int n_particles = 200;
  int m_pixels = 128;       // pixel subset size per weight update
  double sigma_t = 0.005;   // meters, per axis
  double sigma_r = 0.005;   // radians, per axis
  double init_radius_t = 0.02;  // meters
  double init_radius_r = 0.02;  // radians
  double spread_threshold_1 = 0.01;   // meters
  double spread_threshold_2 = 0.005;  // meters
  int annealed_particles = 100;
  int weight_exponent = 4;
  int iterations = 50;
  double loss_epsilon = 1e-8;
  std::uint64_t seed = 0;
  ResamplingScheme resampling = ResamplingScheme::multinomial;
};

inline void validate(const FilterConfig& cfg) {
  if (cfg.n_particles < 1 || cfg.m_pixels < 1 || cfg.annealed_particles < 1 ||
      cfg.weight_exponent < 1 || cfg.iterations < 0)
    throw std::invalid_argument("filter config counts must be >= 1");
  if (cfg.sigma_t < 0.0 || cfg.sigma_r < 0.0 || cfg.init_radius_t < 0.0 || cfg.init_radius_r < 0.0)
    throw std::invalid_argument("filter config sigmas and radii must be nonnegative");
  if (!(cfg.spread_threshold_2 < cfg.spread_threshold_1))
    throw std::invalid_argument("filter config requires spread_threshold_2 < spread_threshold_1");
  if (!(cfg.loss_epsilon > 0.0))
    throw std::invalid_argument("filter config requires loss_epsilon > 0");
}

struct FilterState {
  std::vector<Particle> particles;
  int iteration = 0;
  double sigma_t = 0.0;  // current, after annealing
  double sigma_r = 0.0;
  int anneal_stage = 0;  // 0, 1 or 2; never decreases

  // Diagnostics from the latest update_weights call: the shared pixel subset
  // and the un-normalized likelihood weights.
  std::vector<PixelCoord> last_pixels;
  std::vector<double> raw_weights;
};

struct TraceRecord {
  int iteration = 0;
  Pose estimate;
  double spread_m = 0.0;
  double ess = 0.0;
  int anneal_stage = 0;
  std::optional<PoseError> error;  // present when ground truth was supplied
};

struct Trace {
  std::vector<TraceRecord> records;
};

inline FilterState init_particles(const Pose& initial, const FilterConfig& cfg, Rng& rng) {
  validate(cfg);
  FilterState state;
  state.particles.resize(cfg.n_particles);
  for (Particle& p : state.particles) {
    p.pose = sample_pose_in_ball(initial, cfg.init_radius_t, cfg.init_radius_r, rng);
    p.weight = 1.0 / cfg.n_particles;
  }
  state.sigma_t = cfg.sigma_t;
  state.sigma_r = cfg.sigma_r;
  return state;
}

// Prediction step: diffuse every particle with the current noise scales.
// Weights are untouched; the measurement owns reweighting.
inline void predict(FilterState& state, Rng& rng) {
  for (Particle& p : state.particles)
    p.pose = perturb_pose(p.pose, state.sigma_t, state.sigma_r, rng);
  ++state.iteration;
}

inline double translation_spread(const FilterState& state) {
  if (state.particles.empty()) throw std::invalid_argument("translation_spread: no particles");
  const double n = static_cast<double>(state.particles.size());
  Vec3 mean;
  for (const Particle& p : state.particles) mean += p.pose.translation;
  mean = mean / n;
  Vec3 var;
  for (const Particle& p : state.particles) {
    const Vec3 d = p.pose.translation - mean;
    var += Vec3{d.x * d.x, d.y * d.y, d.z * d.z};
  }
  var = var / n;
  return (std::sqrt(var.x) + std::sqrt(var.y) + std::sqrt(var.z)) / 3.0;
}

namespace detail {

inline double ipow(double base, int exponent) {
  double out = 1.0;
  for (int i = 0; i < exponent; ++i) out *= base;
  return out;
}

// M distinct raster coordinates, uniform without replacement.
inline std::vector<PixelCoord> draw_pixel_subset(int width, int height, int m, Rng& rng) {
  const std::size_t total = static_cast<std::size_t>(width) * height;
  if (static_cast<std::size_t>(m) > total)
    throw std::invalid_argument("pixel subset larger than the raster");
  std::vector<std::uint32_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0u);
  std::vector<PixelCoord> out(m);
  for (int i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(idx[i], idx[pick(rng)]);
    out[i] = {static_cast<int>(idx[i] % width), static_cast<int>(idx[i] / width)};
  }
  return out;
}

}  // namespace detail

/// Raw likelihood weight for a photometric residual summed over M pixels.
inline double measurement_weight(double residual_sum, int m_pixels, const FilterConfig& cfg) {
  return detail::ipow(m_pixels / (residual_sum + cfg.loss_epsilon), cfg.weight_exponent);
}

// Measurement update: one pixel subset is drawn per call and shared by all
// particles, so the weights rank render quality on identical evidence.
inline void update_weights(FilterState& state, const VoxelGrid& grid, const Image& query,
                           const CameraIntrinsics& intr, const FilterConfig& cfg,
                           const RaySamplingConfig& sampling, Rng& rng, int workers = 1) {
  if (query.width != intr.width || query.height != intr.height)
    throw std::invalid_argument("update_weights: query dimensions do not match intrinsics");
  state.last_pixels = detail::draw_pixel_subset(intr.width, intr.height, cfg.m_pixels, rng);

  const int m = cfg.m_pixels;
  state.raw_weights.assign(state.particles.size(), 0.0);
  parallel_for(state.particles.size(), workers, [&](std::size_t i) {
    const auto samples =
        render_pixels(grid, state.particles[i].pose, intr, state.last_pixels, sampling);
    double residual = 0.0;
    for (const PixelSample& s : samples) {
      const Rgb q = query.at(s.coordinate.x, s.coordinate.y);
      const double dr = q.r - s.color.r;
      const double dg = q.g - s.color.g;
      const double db = q.b - s.color.b;
      residual += dr * dr + dg * dg + db * db;
    }
    state.raw_weights[i] = measurement_weight(residual, m, cfg);
  });

  double sum = 0.0;
  for (double w : state.raw_weights) sum += w;
  if (!(sum > 0.0) || !std::isfinite(sum))
    throw degenerate_weights_error("update_weights: likelihood weights degenerate");
  for (std::size_t i = 0; i < state.particles.size(); ++i)
    state.particles[i].weight = state.raw_weights[i] / sum;
}

// Draws n particles with replacement, proportional to weight, and resets the
// weights to uniform.
inline void resample(FilterState& state, const FilterConfig& cfg, Rng& rng) {
  const std::size_t n = state.particles.size();
  std::vector<double> cumulative(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = state.particles[i].weight;
    if (w < 0.0 || !std::isfinite(w))
      throw degenerate_weights_error("resample: invalid particle weight");
    total += w;
    cumulative[i] = total;
  }
  if (!(total > 0.0)) throw degenerate_weights_error("resample: all particle weights are zero");

  std::vector<Particle> next(n);
  if (cfg.resampling == ResamplingScheme::multinomial) {
    std::uniform_real_distribution<double> u(0.0, total);
    for (std::size_t i = 0; i < n; ++i) {
      const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u(rng));
      const std::size_t src = std::min<std::size_t>(it - cumulative.begin(), n - 1);
      next[i] = state.particles[src];
    }
  } else {
    const double step = total / static_cast<double>(n);
    std::uniform_real_distribution<double> u(0.0, step);
    double point = u(rng);
    std::size_t src = 0;
    for (std::size_t i = 0; i < n; ++i) {
      while (src + 1 < n && cumulative[src] <= point) ++src;
      next[i] = state.particles[src];
      point += step;
    }
  }
  for (Particle& p : next) p.weight = 1.0 / static_cast<double>(n);
  state.particles = std::move(next);
}

// Annealing schedule: once the cloud's translation spread first drops below
// threshold 1 the particle count shrinks to the highest-weight subset and the
// noise halves; below threshold 2 the noise drops to a quarter of the base.
// At most one transition per call, and the stage never decreases.
inline void anneal(FilterState& state, const FilterConfig& cfg) {
  const double spread = translation_spread(state);
  if (state.anneal_stage == 0 && spread < cfg.spread_threshold_1) {
    state.anneal_stage = 1;
    if (state.particles.size() > static_cast<std::size_t>(cfg.annealed_particles)) {
      std::vector<std::size_t> order(state.particles.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return state.particles[a].weight > state.particles[b].weight;
      });
      order.resize(cfg.annealed_particles);
      std::sort(order.begin(), order.end());
      std::vector<Particle> kept;
      kept.reserve(order.size());
      for (std::size_t i : order) kept.push_back(state.particles[i]);
      double sum = 0.0;
      for (const Particle& p : kept) sum += p.weight;
      if (!(sum > 0.0)) throw degenerate_weights_error("anneal: kept weights are all zero");
      for (Particle& p : kept) p.weight /= sum;
      state.particles = std::move(kept);
    }
    state.sigma_t = cfg.sigma_t / 2.0;
    state.sigma_r = cfg.sigma_r / 2.0;
  } else if (state.anneal_stage == 1 && spread < cfg.spread_threshold_2) {
    state.anneal_stage = 2;
    state.sigma_t = cfg.sigma_t / 4.0;
    state.sigma_r = cfg.sigma_r / 4.0;
  }
}

inline Pose estimate(const FilterState& state) {
  std::vector<Pose> poses;
  std::vector<double> weights;
  poses.reserve(state.particles.size());
  weights.reserve(state.particles.size());
  for (const Particle& p : state.particles) {
    poses.push_back(p.pose);
    weights.push_back(p.weight);
  }
  return weighted_mean_pose(poses, weights);
}

inline double effective_sample_size(const FilterState& state) {
  double sum_sq = 0.0;
  for (const Particle& p : state.particles) sum_sq += p.weight * p.weight;
  return sum_sq > 0.0 ? 1.0 / sum_sq : 0.0;
}

struct RefineResult {
  Pose pose;
  Trace trace;
};

// Full refinement loop: initialize around the prior, then iterate
// predict -> update -> estimate/record -> anneal -> resample.
inline RefineResult refine(const VoxelGrid& grid, const Image& query, const CameraIntrinsics& intr,
                           const Pose& initial, const FilterConfig& cfg,
                           const RaySamplingConfig& sampling, Rng& rng, int workers = 1,
                           const std::optional<Pose>& ground_truth = std::nullopt) {
  FilterState state = init_particles(initial, cfg, rng);
  RefineResult result;
  const auto record = [&](const Pose& est) {
    TraceRecord rec;
    rec.iteration = state.iteration;
    rec.estimate = est;
    rec.spread_m = translation_spread(state);
    rec.ess = effective_sample_size(state);
    rec.anneal_stage = state.anneal_stage;
    if (ground_truth) rec.error = pose_error(est, *ground_truth);
    result.trace.records.push_back(rec);
  };

  Pose est = estimate(state);
  record(est);
  for (int it = 0; it < cfg.iterations; ++it) {
    predict(state, rng);
    update_weights(state, grid, query, intr, cfg, sampling, rng, workers);
    est = estimate(state);
    record(est);
    anneal(state, cfg);
    resample(state, cfg, rng);
  }
  result.pose = est;
  return result;
}

// Trace CSV; the error columns appear only when ground truth was supplied.
inline void save_trace_csv(const Trace& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace: " + path.string());
  const bool with_error = !trace.records.empty() && trace.records.front().error.has_value();
  out << "iteration,tx,ty,tz,qw,qx,qy,qz,spread_m,ess,anneal_stage";
  if (with_error) out << ",trans_err_m,rot_err_deg";
  out << "\n";
  char buf[512];
  for (const TraceRecord& r : trace.records) {
    const Pose& p = r.estimate;
    std::snprintf(buf, sizeof(buf),
                  "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d", r.iteration,
                  p.translation.x, p.translation.y, p.translation.z, p.rotation.w, p.rotation.x,
                  p.rotation.y, p.rotation.z, r.spread_m, r.ess, r.anneal_stage);
    out << buf;
    if (with_error) {
      std::snprintf(buf, sizeof(buf), ",%.17g,%.17g", r.error->translation_err,
                    r.error->rotation_err);
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("error writing trace: " + path.string());
}

}  // namespace voxloc
