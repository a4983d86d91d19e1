#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "voxloc/geometry.hpp"
#include "voxloc/image.hpp"
#include "voxloc/mcl.hpp"
#include "voxloc/parallel.hpp"
#include "voxloc/radiance_field.hpp"
#include "voxloc/renderer.hpp"

namespace voxloc {

/// Candidate set for the coarse photometric search.
struct SearchConfig {
  std::vector<Pose> candidates;
  int m_pixels = 256;
  std::uint64_t seed = 0;
};

// Candidate poses on a translation lattice over the bbox, each repeated for
// yaw_steps headings about the world z axis (cameras look horizontally).
inline std::vector<Pose> lattice_candidates(const Vec3& bbox_min, const Vec3& bbox_max,
                                            double spacing, int yaw_steps) {
  if (!(spacing > 0.0)) throw std::invalid_argument("lattice spacing must be positive");
  if (yaw_steps < 1) throw std::invalid_argument("lattice needs at least one yaw step");
  // Base orientation: camera -z along world +x, +y up along world +z.
  const Pose base = look_at({0, 0, 0}, {1, 0, 0}, {0, 0, 1});
  std::vector<Pose> out;
  for (double z = bbox_min.z + spacing / 2; z < bbox_max.z; z += spacing)
    for (double y = bbox_min.y + spacing / 2; y < bbox_max.y; y += spacing)
      for (double x = bbox_min.x + spacing / 2; x < bbox_max.x; x += spacing)
        for (int k = 0; k < yaw_steps; ++k) {
          const double yaw = 2.0 * kPi * k / yaw_steps;
          out.push_back({Vec3{x, y, z},
                         UnitQuaternion::from_axis_angle({0, 0, 1}, yaw) * base.rotation});
        }
  return out;
}

struct LocalizeResult {
  Pose pose;
  double score = 0.0;  // mean squared photometric difference, lower is better
  std::size_t candidate_index = 0;
};

// Scores every candidate on one shared random pixel subset and returns the
// best; ties break toward the lower candidate index.
inline LocalizeResult coarse_localize(const VoxelGrid& grid, const Image& query,
                                      const CameraIntrinsics& intr, const SearchConfig& cfg,
                                      const RaySamplingConfig& sampling, int workers = 1) {
  if (cfg.candidates.empty())
    throw std::invalid_argument("coarse_localize: candidate list must be nonempty");
  if (query.width != intr.width || query.height != intr.height)
    throw std::invalid_argument("coarse_localize: query dimensions do not match intrinsics");
  Rng rng = make_rng(cfg.seed);
  const auto pixels = detail::draw_pixel_subset(intr.width, intr.height, cfg.m_pixels, rng);

  std::vector<double> scores(cfg.candidates.size());
  parallel_for(cfg.candidates.size(), workers, [&](std::size_t i) {
    const auto renders = render_pixels(grid, cfg.candidates[i], intr, pixels, sampling);
    double residual = 0.0;
    for (const PixelSample& s : renders) {
      const Rgb q = query.at(s.coordinate.x, s.coordinate.y);
      const double dr = q.r - s.color.r;
      const double dg = q.g - s.color.g;
      const double db = q.b - s.color.b;
      residual += dr * dr + dg * dg + db * db;
    }
    scores[i] = residual / static_cast<double>(pixels.size());
  });

  LocalizeResult best;
  best.score = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] < best.score) {
      best.score = scores[i];
      best.candidate_index = i;
    }
  }
  best.pose = cfg.candidates[best.candidate_index];
  return best;
}

// Random view synthesis offsets: every pose moves inside a ball of psi meters
// and phi radians. Pairing the output with rendered images yields synthetic
// training samples.
inline std::vector<Pose> rvs_perturb(std::span<const Pose> train_poses, double psi, double phi,
                                     Rng& rng) {
  if (psi < 0.0 || phi < 0.0)
    throw std::invalid_argument("rvs_perturb: radii must be nonnegative");
  std::vector<Pose> out;
  out.reserve(train_poses.size());
  for (const Pose& p : train_poses) out.push_back(sample_pose_in_ball(p, psi, phi, rng));
  return out;
}

}  // namespace voxloc
