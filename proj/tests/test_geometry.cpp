#include "voxloc/geometry.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

using namespace voxloc;

namespace {

Pose random_pose(Rng& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::normal_distribution<double> n(0.0, 1.0);
  return {Vec3{u(rng), u(rng), u(rng)},
          UnitQuaternion::make(n(rng), n(rng), n(rng), n(rng))};
}

}  // namespace

TEST(RayForPixel, PrincipalRayIsCameraForward) {
  CameraIntrinsics intr{100, 100, 100.0, 100.0, 50.0, 50.0};
  const Ray r = ray_for_pixel(intr, Pose::identity(), {50, 50});
  EXPECT_EQ(r.direction.x, 0.0);
  EXPECT_EQ(r.direction.y, 0.0);
  EXPECT_EQ(r.direction.z, -1.0);
}

TEST(RayForPixel, TranslationMovesOriginOnly) {
  CameraIntrinsics intr{100, 100, 100.0, 100.0, 50.0, 50.0};
  Pose p;
  const Ray a = ray_for_pixel(intr, p, {17, 83});
  p.translation = Vec3{1.5, -2.0, 0.25};
  const Ray b = ray_for_pixel(intr, p, {17, 83});
  EXPECT_EQ(b.origin.x, 1.5);
  EXPECT_EQ(b.origin.y, -2.0);
  EXPECT_EQ(b.origin.z, 0.25);
  EXPECT_EQ(a.direction.x, b.direction.x);
  EXPECT_EQ(a.direction.y, b.direction.y);
  EXPECT_EQ(a.direction.z, b.direction.z);
}

// Hand-evaluated pinhole back-projection: one principal-length offset in +u
// maps to 45 degrees off the forward (-z) axis.
TEST(RayForPixel, HandEvaluatedBackProjection) {
  CameraIntrinsics intr{200, 100, 100.0, 100.0, 50.0, 50.0};
  const Ray r = ray_for_pixel(intr, Pose::identity(), {150, 50});
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(r.direction.x, inv_sqrt2, 1e-12);
  EXPECT_NEAR(r.direction.y, 0.0, 1e-12);
  EXPECT_NEAR(r.direction.z, -inv_sqrt2, 1e-12);
}

TEST(RayForPixel, OutOfBoundsPixelThrows) {
  CameraIntrinsics intr{100, 100, 100.0, 100.0, 50.0, 50.0};
  EXPECT_THROW(ray_for_pixel(intr, Pose::identity(), {100, 0}), std::invalid_argument);
  EXPECT_THROW(ray_for_pixel(intr, Pose::identity(), {0, -1}), std::invalid_argument);
  EXPECT_THROW(ray_for_pixel(intr, Pose::identity(), {0, 0}, 1.0, 0.0), std::invalid_argument);
}

TEST(RayForPixel, CornersReprojectWithinTolerance) {
  CameraIntrinsics intr{160, 120, 140.0, 135.0, 79.5, 61.25};
  Rng rng = make_rng(11);
  const Pose pose = random_pose(rng);
  const PixelCoord corners[] = {{0, 0}, {159, 0}, {0, 119}, {159, 119}};
  for (const PixelCoord px : corners) {
    const Ray r = ray_for_pixel(intr, pose, px);
    double u = 0.0, v = 0.0;
    ASSERT_TRUE(project_direction(intr, pose, r.direction, u, v));
    EXPECT_NEAR(u, px.x, 1e-6);
    EXPECT_NEAR(v, px.y, 1e-6);
  }
}

TEST(PerturbPose, ZeroNoiseIsIdentityMap) {
  Rng rng = make_rng(3);
  const Pose p = random_pose(rng);
  const Pose q = perturb_pose(p, 0.0, 0.0, rng);
  EXPECT_EQ(p.translation.x, q.translation.x);
  EXPECT_EQ(p.translation.y, q.translation.y);
  EXPECT_EQ(p.translation.z, q.translation.z);
  EXPECT_EQ(p.rotation.w, q.rotation.w);
  EXPECT_EQ(p.rotation.x, q.rotation.x);
}

TEST(PerturbPose, NegativeSigmaThrows) {
  Rng rng = make_rng(3);
  EXPECT_THROW(perturb_pose(Pose::identity(), -0.1, 0.0, rng), std::invalid_argument);
  EXPECT_THROW(perturb_pose(Pose::identity(), 0.0, -0.1, rng), std::invalid_argument);
}

TEST(PerturbPose, TranslationSampleStdMatchesSigma) {
  Rng rng = make_rng(7);
  const double sigma = 0.005;
  const int n = 100000;
  double sum[3] = {0, 0, 0};
  double sq[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i) {
    const Pose p = perturb_pose(Pose::identity(), sigma, 0.0, rng);
    const double d[3] = {p.translation.x, p.translation.y, p.translation.z};
    for (int a = 0; a < 3; ++a) {
      sum[a] += d[a];
      sq[a] += d[a] * d[a];
    }
  }
  for (int a = 0; a < 3; ++a) {
    const double mean = sum[a] / n;
    const double var = sq[a] / n - mean * mean;
    EXPECT_NEAR(std::sqrt(var), sigma, 0.03 * sigma);
  }
}

TEST(PerturbPose, RotationStaysUnitNorm) {
  Rng rng = make_rng(9);
  Pose p = random_pose(rng);
  for (int i = 0; i < 2000; ++i) {
    p = perturb_pose(p, 0.01, 0.02, rng);
    EXPECT_NEAR(p.rotation.norm(), 1.0, 1e-9);
    EXPECT_GE(p.rotation.w, 0.0);
  }
}

TEST(SamplePoseInBall, DegenerateBallReturnsCenter) {
  Rng rng = make_rng(5);
  const Pose c = random_pose(rng);
  const Pose s = sample_pose_in_ball(c, 0.0, 0.0, rng);
  EXPECT_EQ(c.translation.x, s.translation.x);
  EXPECT_EQ(c.rotation.w, s.rotation.w);
  EXPECT_EQ(c.rotation.z, s.rotation.z);
}

TEST(SamplePoseInBall, SamplesAreContained) {
  Rng rng = make_rng(21);
  const Pose c = random_pose(rng);
  const double rt = 0.02, rr = 0.15;
  for (int i = 0; i < 10000; ++i) {
    const Pose s = sample_pose_in_ball(c, rt, rr, rng);
    EXPECT_LE((s.translation - c.translation).norm(), rt + 1e-12);
    EXPECT_LE(s.rotation.angle_to(c.rotation), rr + 1e-12);
  }
}

// Mean distance from the center of a uniform unit ball is 3/4.
TEST(SamplePoseInBall, MeanRadiusOfUnitBall) {
  Rng rng = make_rng(33);
  double acc = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i)
    acc += (sample_pose_in_ball(Pose::identity(), 1.0, 0.0, rng).translation).norm();
  EXPECT_NEAR(acc / n, 0.75, 0.02 * 0.75);
}

TEST(WeightedMeanPose, SinglePose) {
  Rng rng = make_rng(2);
  const Pose p = random_pose(rng);
  const double w = 2.5;
  const Pose m = weighted_mean_pose(std::span(&p, 1), std::span(&w, 1));
  EXPECT_NEAR(m.translation.x, p.translation.x, 1e-15);
  EXPECT_NEAR(std::abs(m.rotation.dot(p.rotation)), 1.0, 1e-12);
}

TEST(WeightedMeanPose, MidpointTranslation) {
  const Pose a{Vec3{0, 0, 0}, UnitQuaternion::identity()};
  const Pose b{Vec3{2, 0, 0}, UnitQuaternion::identity()};
  const std::vector<Pose> ps{a, b};
  const std::vector<double> ws{1.0, 1.0};
  const Pose m = weighted_mean_pose(ps, ws);
  EXPECT_NEAR(m.translation.x, 1.0, 1e-15);
  EXPECT_EQ(m.translation.y, 0.0);
}

// Rotations that straddle the 180-degree seam must be sign-aligned before
// averaging, otherwise the sum cancels toward zero.
TEST(WeightedMeanPose, HemisphereAlignmentAcrossSeam) {
  const auto q1 = UnitQuaternion::from_axis_angle({0, 0, 1}, deg_to_rad(179.0));
  const auto q2 = UnitQuaternion::from_axis_angle({0, 0, 1}, deg_to_rad(-179.0));
  ASSERT_LT(q1.dot(q2), 0.0);
  const std::vector<Pose> ps{{Vec3{}, q1}, {Vec3{}, q2}};
  const std::vector<double> ws{1.0, 1.0};
  const Pose m = weighted_mean_pose(ps, ws);
  const auto expected = UnitQuaternion::from_axis_angle({0, 0, 1}, deg_to_rad(180.0));
  EXPECT_LT(rad_to_deg(m.rotation.angle_to(expected)), 1e-9);
}

TEST(WeightedMeanPose, InvariantUnderWeightScaling) {
  Rng rng = make_rng(17);
  std::vector<Pose> ps;
  std::vector<double> ws, ws_scaled;
  std::uniform_real_distribution<double> u(0.1, 2.0);
  for (int i = 0; i < 8; ++i) {
    ps.push_back(random_pose(rng));
    ws.push_back(u(rng));
    ws_scaled.push_back(ws.back() * 7.25);
  }
  const Pose a = weighted_mean_pose(ps, ws);
  const Pose b = weighted_mean_pose(ps, ws_scaled);
  EXPECT_NEAR(a.translation.x, b.translation.x, 1e-12);
  EXPECT_NEAR(a.translation.y, b.translation.y, 1e-12);
  EXPECT_NEAR(a.translation.z, b.translation.z, 1e-12);
  EXPECT_NEAR(std::abs(a.rotation.dot(b.rotation)), 1.0, 1e-12);
}

TEST(WeightedMeanPose, RejectsDegenerateInput) {
  const std::vector<Pose> ps{Pose::identity()};
  const std::vector<double> zero{0.0};
  EXPECT_THROW(weighted_mean_pose(std::span<const Pose>{}, std::span<const double>{}),
               std::invalid_argument);
  EXPECT_THROW(weighted_mean_pose(ps, zero), std::invalid_argument);
}

TEST(PoseErrorMetric, IdenticalPosesAreZero) {
  Rng rng = make_rng(4);
  const Pose p = random_pose(rng);
  const PoseError e = pose_error(p, p);
  EXPECT_EQ(e.translation_err, 0.0);
  EXPECT_NEAR(e.rotation_err, 0.0, 1e-6);
}

TEST(PoseErrorMetric, ThreeFourFive) {
  const Pose a{Vec3{0, 0, 0}, UnitQuaternion::identity()};
  const Pose b{Vec3{3, 4, 0}, UnitQuaternion::identity()};
  EXPECT_NEAR(pose_error(a, b).translation_err, 5.0, 1e-15);
}

TEST(PoseErrorMetric, HalfTurnIs180Degrees) {
  const Pose a{Vec3{}, UnitQuaternion::identity()};
  const Pose b{Vec3{}, UnitQuaternion::from_axis_angle({0, 0, 1}, kPi)};
  EXPECT_NEAR(pose_error(a, b).rotation_err, 180.0, 1e-9);
}

TEST(PoseErrorMetric, DoubleCoverGivesZero) {
  const auto q = UnitQuaternion::make(0.3, -0.5, 0.1, 0.8);
  const auto nq = UnitQuaternion::make(-0.3, 0.5, -0.1, -0.8);
  EXPECT_NEAR(rad_to_deg(q.angle_to(nq)), 0.0, 1e-9);
}

TEST(PoseErrorMetric, SymmetricAndLeftInvariant) {
  Rng rng = make_rng(29);
  for (int i = 0; i < 200; ++i) {
    const Pose a = random_pose(rng);
    const Pose b = random_pose(rng);
    const Pose g = random_pose(rng);
    const PoseError ab = pose_error(a, b);
    const PoseError ba = pose_error(b, a);
    EXPECT_NEAR(ab.translation_err, ba.translation_err, 1e-12);
    EXPECT_NEAR(ab.rotation_err, ba.rotation_err, 1e-9);
    const PoseError moved = pose_error(g * a, g * b);
    EXPECT_NEAR(ab.translation_err, moved.translation_err, 1e-9);
    EXPECT_NEAR(ab.rotation_err, moved.rotation_err, 1e-7);
  }
}

TEST(PoseAlgebra, ComposeWithInverseIsIdentity) {
  Rng rng = make_rng(41);
  for (int i = 0; i < 100; ++i) {
    const Pose p = random_pose(rng);
    const Pose e = p * p.inverse();
    EXPECT_NEAR(e.translation.norm(), 0.0, 1e-9);
    EXPECT_NEAR(rad_to_deg(e.rotation.angle_to(UnitQuaternion::identity())), 0.0, 1e-9);
  }
}

TEST(LookAt, PointsCameraAtTarget) {
  const Vec3 eye{1.0, -2.0, 0.5};
  const Vec3 target{0.0, 0.0, 0.0};
  const Pose p = look_at(eye, target, {0, 0, 1});
  const Vec3 forward = p.rotation.rotate({0, 0, -1});
  const Vec3 expect = (target - eye).normalized();
  EXPECT_NEAR(forward.x, expect.x, 1e-12);
  EXPECT_NEAR(forward.y, expect.y, 1e-12);
  EXPECT_NEAR(forward.z, expect.z, 1e-12);
}

TEST(PoseText, RoundTripAndComments) {
  Rng rng = make_rng(55);
  std::vector<Pose> poses;
  for (int i = 0; i < 5; ++i) poses.push_back(random_pose(rng));

  const auto path = std::filesystem::temp_directory_path() / "voxloc_poses_test.txt";
  save_poses(path, poses);
  {
    std::ofstream app(path, std::ios::app);
    app << "# trailing comment line\n\n";
  }
  const auto loaded = load_poses(path);
  ASSERT_EQ(loaded.size(), poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    EXPECT_EQ(loaded[i].translation.x, poses[i].translation.x);
    EXPECT_EQ(loaded[i].rotation.w, poses[i].rotation.w);
    EXPECT_EQ(loaded[i].rotation.z, poses[i].rotation.z);
  }
  std::filesystem::remove(path);
}

TEST(PoseText, MalformedLineReportsLineNumber) {
  const auto path = std::filesystem::temp_directory_path() / "voxloc_poses_bad.txt";
  {
    std::ofstream out(path);
    out << "0 0 0 1 0 0 0\n";
    out << "not a pose\n";
  }
  try {
    load_poses(path);
    FAIL() << "expected parse failure";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(PoseText, ParseRejectsTrailingTokens) {
  EXPECT_THROW(parse_pose("0 0 0 1 0 0 0 junk"), std::invalid_argument);
  EXPECT_THROW(parse_pose("0 0 0 1 0 0"), std::invalid_argument);
}
