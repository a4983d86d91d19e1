#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxloc/field_fit.hpp"
#include "voxloc/geometry.hpp"
#include "voxloc/image.hpp"
#include "voxloc/mcl.hpp"
#include "voxloc/parallel.hpp"
#include "voxloc/radiance_field.hpp"
#include "voxloc/renderer.hpp"

namespace voxloc {

struct OrbitSpec {
  Vec3 center;
  double radius = 1.0;
  int count = 1;
  double height = 0.0;  // camera z offset above the orbit center
};

/// Everything one synthetic evaluation run needs: the scene, the camera, the
/// training trajectory, the query draw, and the filter settings.
struct BenchmarkSpec {
  SceneSpec scene;
  int nx = 64, ny = 64, nz = 64;
  CameraIntrinsics intrinsics{160, 120, 140.0, 140.0, 80.0, 60.0};
  std::optional<OrbitSpec> orbit;
  std::vector<Pose> train_poses;  // used when no orbit is given
  int query_count = 20;
  double offset_t = 0.05;                 // initial-estimate translation radius, meters
  double offset_r = deg_to_rad(5.0);      // initial-estimate rotation radius, radians
  FilterConfig filter;
  int render_samples = 128;
  std::uint64_t seed = 0;
};

inline void validate(const BenchmarkSpec& spec) {
  validate(spec.scene);
  validate(spec.intrinsics);
  validate(spec.filter);
  if (spec.nx < 1 || spec.ny < 1 || spec.nz < 1)
    throw std::invalid_argument("benchmark: grid dims must be positive");
  if (spec.orbit && spec.orbit->count < 1)
    throw std::invalid_argument("benchmark: orbit count must be >= 1");
  if (!spec.orbit && spec.train_poses.empty())
    throw std::invalid_argument("benchmark: needs an orbit or explicit train poses");
  if (spec.query_count < 0) throw std::invalid_argument("benchmark: query count must be >= 0");
  if (spec.offset_t < 0.0 || spec.offset_r < 0.0)
    throw std::invalid_argument("benchmark: offsets must be nonnegative");
  if (spec.render_samples < 1)
    throw std::invalid_argument("benchmark: render_samples must be >= 1");
}

// The stock desk-scale benchmark: five colored primitives in a 2 m box,
// voxelized at 64^3, with 60 orbiting training views and 20 queries.
inline BenchmarkSpec default_benchmark() {
  BenchmarkSpec spec;
  spec.scene.bbox_min = {-1, -1, -1};
  spec.scene.bbox_max = {1, 1, 1};
  spec.scene.primitives = {
      {SphereShape{{0.25, 0.0, 0.1}, 0.18}, 25.0, {0.9, 0.15, 0.1}},
      {SphereShape{{-0.3, 0.2, -0.05}, 0.22}, 25.0, {0.1, 0.8, 0.2}},
      {BoxShape{{-0.15, -0.4, -0.3}, {0.2, -0.1, 0.0}}, 20.0, {0.15, 0.3, 0.9}},
      {SphereShape{{0.0, 0.35, -0.2}, 0.15}, 25.0, {0.9, 0.85, 0.1}},
      {BoxShape{{0.1, -0.05, 0.25}, {0.45, 0.3, 0.45}}, 20.0, {0.8, 0.2, 0.8}},
  };
  spec.orbit = OrbitSpec{{0, 0, 0}, 0.85, 60, 0.35};
  return spec;
}

inline Pose orbit_camera_pose(const OrbitSpec& orbit, double angle) {
  const Vec3 eye{orbit.center.x + orbit.radius * std::cos(angle),
                 orbit.center.y + orbit.radius * std::sin(angle),
                 orbit.center.z + orbit.height};
  return look_at(eye, orbit.center, {0, 0, 1});
}

struct QueryCase {
  Pose ground_truth;
  Pose initial;  // synthesized estimate the filter starts from
  Image image;
};

struct Benchmark {
  VoxelGrid grid;
  TrainSet train;
  std::vector<QueryCase> queries;
};

// Builds the map, renders the training and query views from their ground
// truth poses, and synthesizes per-query initial estimates inside the
// configured offset ball. Deterministic for a fixed seed and any workers.
inline Benchmark generate_benchmark(const BenchmarkSpec& spec, int workers = 1) {
  validate(spec);
  Benchmark bench;
  bench.grid = build_procedural_scene(spec.scene, spec.nx, spec.ny, spec.nz);

  RaySamplingConfig sampling;
  sampling.n_samples = spec.render_samples;

  bench.train.intrinsics = spec.intrinsics;
  if (spec.orbit) {
    for (int i = 0; i < spec.orbit->count; ++i)
      bench.train.poses.push_back(
          orbit_camera_pose(*spec.orbit, 2.0 * kPi * i / spec.orbit->count));
  } else {
    bench.train.poses = spec.train_poses;
  }
  bench.train.images.resize(bench.train.poses.size());
  for (std::size_t i = 0; i < bench.train.poses.size(); ++i)
    bench.train.images[i] =
        render_image(bench.grid, bench.train.poses[i], spec.intrinsics, sampling, nullptr, workers);

  Rng rng = make_rng(derive_seed(spec.seed, 1));
  std::uniform_real_distribution<double> angle(0.0, 2.0 * kPi);
  std::uniform_int_distribution<std::size_t> pick_train(0, bench.train.poses.size() - 1);
  bench.queries.resize(spec.query_count);
  for (QueryCase& q : bench.queries) {
    q.ground_truth = spec.orbit ? orbit_camera_pose(*spec.orbit, angle(rng))
                                : bench.train.poses[pick_train(rng)];
    q.initial = sample_pose_in_ball(q.ground_truth, spec.offset_t, spec.offset_r, rng);
  }
  for (QueryCase& q : bench.queries)
    q.image = render_image(bench.grid, q.ground_truth, spec.intrinsics, sampling, nullptr, workers);
  return bench;
}

struct QueryResult {
  std::size_t query_id = 0;
  PoseError init_err;
  PoseError it1_err;
  PoseError final_err;
  double wall_ms = 0.0;
  bool failed = false;
  std::string fail_reason;
  Trace trace;
};

struct MetricsReport {
  std::vector<QueryResult> queries;
  double median_terr_m = 0.0;
  double median_rerr_deg = 0.0;
  double impr_t_pct = 0.0;  // median error improvement, iteration 1 -> final
  double impr_r_pct = 0.0;
  int query_count = 0;
  int failure_count = 0;
};

inline double median_of(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

inline double improvement_pct(double before, double after) {
  if (before == 0.0)
    return after == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  return (before - after) / before * 100.0;
}

// Runs the refinement on every query and aggregates the medians and the
// iteration-1 -> iteration-N improvement percentages. Failed queries are
// counted and excluded from the aggregates.
inline MetricsReport run_experiment(const BenchmarkSpec& spec, int workers = 1) {
  const Benchmark bench = generate_benchmark(spec, workers);
  RaySamplingConfig sampling;
  sampling.n_samples = spec.render_samples;

  MetricsReport report;
  report.queries.resize(bench.queries.size());
  parallel_for(bench.queries.size(), workers, [&](std::size_t i) {
    const QueryCase& q = bench.queries[i];
    QueryResult& out = report.queries[i];
    out.query_id = i;
    out.init_err = pose_error(q.initial, q.ground_truth);
    Rng rng = make_rng(derive_seed(spec.seed, 1000 + i));
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const RefineResult r = refine(bench.grid, q.image, spec.intrinsics, q.initial, spec.filter,
                                    sampling, rng, 1, q.ground_truth);
      out.trace = r.trace;
      out.final_err = pose_error(r.pose, q.ground_truth);
      const std::size_t it1 = std::min<std::size_t>(1, r.trace.records.size() - 1);
      out.it1_err = *r.trace.records[it1].error;
    } catch (const std::exception& e) {
      out.failed = true;
      out.fail_reason = e.what();
    }
    out.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  });

  std::vector<double> it1_t, it1_r, final_t, final_r;
  for (const QueryResult& q : report.queries) {
    if (q.failed) {
      ++report.failure_count;
      continue;
    }
    it1_t.push_back(q.it1_err.translation_err);
    it1_r.push_back(q.it1_err.rotation_err);
    final_t.push_back(q.final_err.translation_err);
    final_r.push_back(q.final_err.rotation_err);
  }
  report.query_count = static_cast<int>(report.queries.size());
  report.median_terr_m = median_of(final_t);
  report.median_rerr_deg = median_of(final_r);
  report.impr_t_pct = improvement_pct(median_of(it1_t), median_of(final_t));
  report.impr_r_pct = improvement_pct(median_of(it1_r), median_of(final_r));
  return report;
}

// Per-iteration median error over all successful query traces; index is the
// filter iteration. Feeds the convergence-curve checks.
inline std::vector<PoseError> median_error_curve(const MetricsReport& report) {
  std::size_t horizon = 0;
  for (const QueryResult& q : report.queries)
    if (!q.failed) horizon = std::max(horizon, q.trace.records.size());
  std::vector<PoseError> curve(horizon);
  for (std::size_t it = 0; it < horizon; ++it) {
    std::vector<double> t, r;
    for (const QueryResult& q : report.queries) {
      if (q.failed || it >= q.trace.records.size() || !q.trace.records[it].error) continue;
      t.push_back(q.trace.records[it].error->translation_err);
      r.push_back(q.trace.records[it].error->rotation_err);
    }
    curve[it] = {median_of(t), median_of(r)};
  }
  return curve;
}

namespace detail {

inline std::string csv_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Writes report.csv (per-query rows) and summary.csv (aggregates) into dir.
inline void emit_report(const MetricsReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.csv");
    if (!out) throw std::runtime_error("cannot write report.csv in " + dir.string());
    out << "query_id,init_terr_m,init_rerr_deg,it1_terr_m,it1_rerr_deg,final_terr_m,"
           "final_rerr_deg,wall_ms\n";
    for (const QueryResult& q : report.queries) {
      if (q.failed) continue;
      out << q.query_id << ',' << detail::csv_double(q.init_err.translation_err) << ','
          << detail::csv_double(q.init_err.rotation_err) << ','
          << detail::csv_double(q.it1_err.translation_err) << ','
          << detail::csv_double(q.it1_err.rotation_err) << ','
          << detail::csv_double(q.final_err.translation_err) << ','
          << detail::csv_double(q.final_err.rotation_err) << ','
          << detail::csv_double(q.wall_ms) << "\n";
    }
  }
  {
    std::ofstream out(dir / "summary.csv");
    if (!out) throw std::runtime_error("cannot write summary.csv in " + dir.string());
    out << "median_terr_m,median_rerr_deg,impr_t_pct,impr_r_pct,queries,failures\n";
    out << detail::csv_double(report.median_terr_m) << ','
        << detail::csv_double(report.median_rerr_deg) << ','
        << detail::csv_double(report.impr_t_pct) << ',' << detail::csv_double(report.impr_r_pct)
        << ',' << report.query_count << ',' << report.failure_count << "\n";
  }
}

// ---------------------------------------------------------------------------
// Benchmark spec text format: scene directives (bbox / background / sphere /
// box) plus benchmark keys, one per line, `#` comments.
// ---------------------------------------------------------------------------

inline BenchmarkSpec parse_benchmark_spec(std::istream& in,
                                          const std::string& source = "<bench>") {
  BenchmarkSpec spec = default_benchmark();
  spec.scene.primitives.clear();
  spec.orbit.reset();
  bool saw_orbit = false;

  std::string line;
  std::size_t line_no = 0;
  const auto fail = [&](const std::string& msg) {
    throw std::runtime_error(source + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    if (detail::parse_scene_directive(spec.scene, word, ls, fail)) {
      // handled
    } else if (word == "dims") {
      if (!(ls >> spec.nx >> spec.ny >> spec.nz)) fail("dims expects nx ny nz");
    } else if (word == "intr") {
      if (!(ls >> spec.intrinsics.width >> spec.intrinsics.height >> spec.intrinsics.fx >>
            spec.intrinsics.fy >> spec.intrinsics.cx >> spec.intrinsics.cy))
        fail("intr expects W H fx fy cx cy");
    } else if (word == "orbit") {
      OrbitSpec orbit;
      if (!(ls >> orbit.center.x >> orbit.center.y >> orbit.center.z >> orbit.radius >>
            orbit.count >> orbit.height))
        fail("orbit expects cx cy cz radius count height");
      spec.orbit = orbit;
      saw_orbit = true;
    } else if (word == "train_pose") {
      std::string rest;
      std::getline(ls, rest);
      try {
        spec.train_poses.push_back(parse_pose(rest));
      } catch (const std::invalid_argument& e) {
        fail(e.what());
      }
      continue;  // parse_pose consumed the remainder
    } else if (word == "queries") {
      if (!(ls >> spec.query_count)) fail("queries expects a count");
    } else if (word == "offset_t") {
      if (!(ls >> spec.offset_t)) fail("offset_t expects meters");
    } else if (word == "offset_r") {
      if (!(ls >> spec.offset_r)) fail("offset_r expects radians");
    } else if (word == "offset_r_deg") {
      double deg;
      if (!(ls >> deg)) fail("offset_r_deg expects degrees");
      spec.offset_r = deg_to_rad(deg);
    } else if (word == "render_samples") {
      if (!(ls >> spec.render_samples)) fail("render_samples expects a count");
    } else if (word == "seed") {
      if (!(ls >> spec.seed)) fail("seed expects an integer");
    } else if (word == "filter.n_particles") {
      if (!(ls >> spec.filter.n_particles)) fail("filter.n_particles expects a count");
    } else if (word == "filter.m_pixels") {
      if (!(ls >> spec.filter.m_pixels)) fail("filter.m_pixels expects a count");
    } else if (word == "filter.sigma_t") {
      if (!(ls >> spec.filter.sigma_t)) fail("filter.sigma_t expects meters");
    } else if (word == "filter.sigma_r") {
      if (!(ls >> spec.filter.sigma_r)) fail("filter.sigma_r expects radians");
    } else if (word == "filter.init_radius_t") {
      if (!(ls >> spec.filter.init_radius_t)) fail("filter.init_radius_t expects meters");
    } else if (word == "filter.init_radius_r") {
      if (!(ls >> spec.filter.init_radius_r)) fail("filter.init_radius_r expects radians");
    } else if (word == "filter.spread_threshold_1") {
      if (!(ls >> spec.filter.spread_threshold_1)) fail("filter.spread_threshold_1 expects meters");
    } else if (word == "filter.spread_threshold_2") {
      if (!(ls >> spec.filter.spread_threshold_2)) fail("filter.spread_threshold_2 expects meters");
    } else if (word == "filter.annealed_particles") {
      if (!(ls >> spec.filter.annealed_particles)) fail("filter.annealed_particles expects a count");
    } else if (word == "filter.weight_exponent") {
      if (!(ls >> spec.filter.weight_exponent)) fail("filter.weight_exponent expects an integer");
    } else if (word == "filter.iterations") {
      if (!(ls >> spec.filter.iterations)) fail("filter.iterations expects a count");
    } else if (word == "filter.loss_epsilon") {
      if (!(ls >> spec.filter.loss_epsilon)) fail("filter.loss_epsilon expects a positive real");
    } else if (word == "filter.seed") {
      if (!(ls >> spec.filter.seed)) fail("filter.seed expects an integer");
    } else if (word == "filter.resampling") {
      std::string scheme;
      if (!(ls >> scheme)) fail("filter.resampling expects multinomial|systematic");
      if (scheme == "multinomial") {
        spec.filter.resampling = ResamplingScheme::multinomial;
      } else if (scheme == "systematic") {
        spec.filter.resampling = ResamplingScheme::systematic;
      } else {
        fail("filter.resampling expects multinomial|systematic");
      }
    } else {
      fail("unknown key '" + word + "'");
    }
    std::string rest;
    if (ls >> rest) fail("trailing tokens after '" + word + "'");
  }
  if (!saw_orbit && spec.train_poses.empty() && spec.query_count >= 0) {
    // Neither an orbit nor explicit poses: fall back to the stock orbit.
    spec.orbit = default_benchmark().orbit;
  }
  try {
    validate(spec);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(source + ": " + e.what());
  }
  return spec;
}

inline BenchmarkSpec load_benchmark_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open benchmark spec: " + path.string());
  return parse_benchmark_spec(in, path.string());
}

}  // namespace voxloc
