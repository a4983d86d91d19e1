#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxloc/random.hpp"

namespace voxloc {

inline constexpr double kPi = std::numbers::pi;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    const double n = norm();
    if (n <= 0.0) throw std::invalid_argument("cannot normalize zero-length vector");
    return *this / n;
  }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

/// Unit quaternion, stored w-first and canonicalized so that w >= 0.
struct UnitQuaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static UnitQuaternion identity() { return {}; }

  // Normalizes and canonicalizes an arbitrary nonzero quadruple.
  static UnitQuaternion make(double w, double x, double y, double z) {
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (!(n > 0.0) || !std::isfinite(n))
      throw std::invalid_argument("quaternion must be nonzero and finite");
    UnitQuaternion q{w / n, x / n, y / n, z / n};
    q.canonicalize();
    return q;
  }

  static UnitQuaternion from_axis_angle(const Vec3& axis, double angle) {
    const Vec3 a = axis.normalized();
    const double h = 0.5 * angle;
    const double s = std::sin(h);
    return make(std::cos(h), a.x * s, a.y * s, a.z * s);
  }

  // exp map of a rotation vector (axis * angle), safe near zero.
  static UnitQuaternion exp(const Vec3& rotvec) {
    const double theta = rotvec.norm();
    double k;  // sin(theta/2) / theta
    if (theta < 1e-8) {
      k = 0.5 - theta * theta / 48.0;
    } else {
      k = std::sin(0.5 * theta) / theta;
    }
    return make(std::cos(0.5 * theta), rotvec.x * k, rotvec.y * k, rotvec.z * k);
  }

  void canonicalize() {
    const bool flip = w < 0.0 || (w == 0.0 && (x < 0.0 || (x == 0.0 && (y < 0.0 || (y == 0.0 && z < 0.0)))));
    if (flip) {
      w = -w;
      x = -x;
      y = -y;
      z = -z;
    }
  }

  UnitQuaternion conjugate() const {
    UnitQuaternion q{w, -x, -y, -z};
    q.canonicalize();
    return q;
  }

  // Hamilton product.
  UnitQuaternion operator*(const UnitQuaternion& o) const {
    return make(w * o.w - x * o.x - y * o.y - z * o.z,
                w * o.x + x * o.w + y * o.z - z * o.y,
                w * o.y - x * o.z + y * o.w + z * o.x,
                w * o.z + x * o.y - y * o.x + z * o.w);
  }

  Vec3 rotate(const Vec3& v) const {
    const Vec3 u{x, y, z};
    const Vec3 t = 2.0 * u.cross(v);
    return v + w * t + u.cross(t);
  }

  double dot(const UnitQuaternion& o) const {
    return w * o.w + x * o.x + y * o.y + z * o.z;
  }

  double norm() const { return std::sqrt(dot(*this)); }

  /// Geodesic angle to another rotation, in radians (double cover handled).
  /// Equals 2*acos(|dot|), evaluated through atan2 for accuracy near 0.
  double angle_to(const UnitQuaternion& o) const {
    const UnitQuaternion r = conjugate() * o;
    const double v = std::sqrt(r.x * r.x + r.y * r.y + r.z * r.z);
    return 2.0 * std::atan2(v, std::abs(r.w));
  }
};

/// Rigid transform mapping camera/body frame into the world frame.
struct Pose {
  Vec3 translation;
  UnitQuaternion rotation;

  static Pose identity() { return {}; }

  Pose operator*(const Pose& o) const {
    return {translation + rotation.rotate(o.translation), rotation * o.rotation};
  }

  Pose inverse() const {
    const UnitQuaternion qi = rotation.conjugate();
    return {-qi.rotate(translation), qi};
  }

  Vec3 apply(const Vec3& v) const { return translation + rotation.rotate(v); }
};

struct CameraIntrinsics {
  int width = 0;
  int height = 0;
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
};

inline void validate(const CameraIntrinsics& intr) {
  if (intr.width < 1 || intr.height < 1)
    throw std::invalid_argument("intrinsics: raster must be at least 1x1");
  if (!(intr.fx > 0.0) || !(intr.fy > 0.0))
    throw std::invalid_argument("intrinsics: focal lengths must be positive");
  if (!(intr.cx >= 0.0) || !(intr.cx < intr.width) || !(intr.cy >= 0.0) || !(intr.cy < intr.height))
    throw std::invalid_argument("intrinsics: principal point outside raster");
}

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit norm
};

struct PixelCoord {
  int x = 0;
  int y = 0;
  bool operator==(const PixelCoord&) const = default;
};

struct PoseError {
  double translation_err = 0.0;  // meters
  double rotation_err = 0.0;     // degrees
};

// Camera convention: right-handed, looks along local -z, +x right, +y up.
// Pixel (u, v) back-projects to ((u + jx - cx)/fx, -(v + jy - cy)/fy, -1) in
// the camera frame before normalization.
inline Ray ray_for_pixel(const CameraIntrinsics& intr, const Pose& pose, PixelCoord px,
                         double jitter_x = 0.0, double jitter_y = 0.0) {
  if (px.x < 0 || px.x >= intr.width || px.y < 0 || px.y >= intr.height)
    throw std::invalid_argument("ray_for_pixel: pixel outside raster");
  if (jitter_x < 0.0 || jitter_x >= 1.0 || jitter_y < 0.0 || jitter_y >= 1.0)
    throw std::invalid_argument("ray_for_pixel: jitter must lie in [0,1)");
  const Vec3 dir_cam{(px.x + jitter_x - intr.cx) / intr.fx,
                     -(px.y + jitter_y - intr.cy) / intr.fy, -1.0};
  return {pose.translation, pose.rotation.rotate(dir_cam.normalized())};
}

/// Forward pinhole projection of a world-space direction from the camera
/// center; inverse of ray_for_pixel up to the sub-pixel offset.
inline bool project_direction(const CameraIntrinsics& intr, const Pose& pose, const Vec3& dir_world,
                              double& u, double& v) {
  const Vec3 d = pose.rotation.conjugate().rotate(dir_world);
  if (!(d.z < 0.0)) return false;  // behind the camera
  u = intr.cx + intr.fx * (d.x / -d.z);
  v = intr.cy - intr.fy * (d.y / -d.z);
  return true;
}

inline Pose perturb_pose(const Pose& p, double sigma_t, double sigma_r, Rng& rng) {
  if (sigma_t < 0.0 || sigma_r < 0.0)
    throw std::invalid_argument("perturb_pose: sigmas must be nonnegative");
  Pose out = p;
  if (sigma_t > 0.0) {
    std::normal_distribution<double> nt(0.0, sigma_t);
    out.translation += Vec3{nt(rng), nt(rng), nt(rng)};
  }
  if (sigma_r > 0.0) {
    std::normal_distribution<double> nr(0.0, sigma_r);
    out.rotation = out.rotation * UnitQuaternion::exp(Vec3{nr(rng), nr(rng), nr(rng)});
  }
  return out;
}

namespace detail {

inline Vec3 uniform_unit_vector(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const Vec3 v{n(rng), n(rng), n(rng)};
    const double len = v.norm();
    if (len > 1e-12) return v / len;
  }
}

}  // namespace detail

// Translation uniform in the solid ball of radius radius_t; rotation offset
// with angle uniform in [0, radius_r] about a uniformly random axis.
inline Pose sample_pose_in_ball(const Pose& center, double radius_t, double radius_r, Rng& rng) {
  if (radius_t < 0.0 || radius_r < 0.0)
    throw std::invalid_argument("sample_pose_in_ball: radii must be nonnegative");
  Pose out = center;
  if (radius_t > 0.0) {
    const Vec3 dir = detail::uniform_unit_vector(rng);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double r = radius_t * std::cbrt(u01(rng));
    out.translation += dir * r;
  }
  if (radius_r > 0.0) {
    const Vec3 axis = detail::uniform_unit_vector(rng);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double angle = radius_r * u01(rng);
    out.rotation = out.rotation * UnitQuaternion::from_axis_angle(axis, angle);
  }
  return out;
}

// Weighted arithmetic mean of translations; weighted quaternion mean with the
// signs aligned to the highest-weight quaternion before summing.
inline Pose weighted_mean_pose(std::span<const Pose> poses, std::span<const double> weights) {
  if (poses.empty() || poses.size() != weights.size())
    throw std::invalid_argument("weighted_mean_pose: empty input or size mismatch");
  double sum_w = 0.0;
  std::size_t ref = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0.0 || !std::isfinite(weights[i]))
      throw std::invalid_argument("weighted_mean_pose: weights must be finite and nonnegative");
    if (weights[i] > weights[ref]) ref = i;
    sum_w += weights[i];
  }
  if (!(sum_w > 0.0)) throw std::invalid_argument("weighted_mean_pose: weight sum must be positive");

  Vec3 t{};
  const UnitQuaternion& qr = poses[ref].rotation;
  double qw = 0.0, qx = 0.0, qy = 0.0, qz = 0.0;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const double w = weights[i];
    t += poses[i].translation * w;
    const UnitQuaternion& q = poses[i].rotation;
    const double sign = q.dot(qr) < 0.0 ? -1.0 : 1.0;
    qw += sign * w * q.w;
    qx += sign * w * q.x;
    qy += sign * w * q.y;
    qz += sign * w * q.z;
  }
  return {t / sum_w, UnitQuaternion::make(qw, qx, qy, qz)};
}

inline PoseError pose_error(const Pose& a, const Pose& b) {
  return {(a.translation - b.translation).norm(), rad_to_deg(a.rotation.angle_to(b.rotation))};
}

/// Pose with the camera placed at `eye`, its -z axis pointing at `target`.
inline Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 f = (target - eye).normalized();
  const Vec3 s = f.cross(up).normalized();
  const Vec3 u = s.cross(f);
  // Columns of the camera-to-world rotation: x=s, y=u, z=-f.
  const double m00 = s.x, m01 = u.x, m02 = -f.x;
  const double m10 = s.y, m11 = u.y, m12 = -f.y;
  const double m20 = s.z, m21 = u.z, m22 = -f.z;
  const double trace = m00 + m11 + m22;
  double w, x, y, z;
  if (trace > 0.0) {
    const double r = std::sqrt(1.0 + trace);
    w = 0.5 * r;
    x = (m21 - m12) / (2.0 * r);
    y = (m02 - m20) / (2.0 * r);
    z = (m10 - m01) / (2.0 * r);
  } else if (m00 >= m11 && m00 >= m22) {
    const double r = std::sqrt(1.0 + m00 - m11 - m22);
    x = 0.5 * r;
    w = (m21 - m12) / (2.0 * r);
    y = (m01 + m10) / (2.0 * r);
    z = (m02 + m20) / (2.0 * r);
  } else if (m11 >= m22) {
    const double r = std::sqrt(1.0 - m00 + m11 - m22);
    y = 0.5 * r;
    w = (m02 - m20) / (2.0 * r);
    x = (m01 + m10) / (2.0 * r);
    z = (m12 + m21) / (2.0 * r);
  } else {
    const double r = std::sqrt(1.0 - m00 - m11 + m22);
    z = 0.5 * r;
    w = (m10 - m01) / (2.0 * r);
    x = (m02 + m20) / (2.0 * r);
    y = (m12 + m21) / (2.0 * r);
  }
  return {eye, UnitQuaternion::make(w, x, y, z)};
}

// ---------------------------------------------------------------------------
// Pose text format: `tx ty tz qw qx qy qz` per line, `#` starts a comment.
// ---------------------------------------------------------------------------

inline Pose parse_pose(const std::string& text) {
  std::istringstream in(text);
  double tx, ty, tz, qw, qx, qy, qz;
  if (!(in >> tx >> ty >> tz >> qw >> qx >> qy >> qz))
    throw std::invalid_argument("pose: expected 7 numbers `tx ty tz qw qx qy qz`");
  std::string rest;
  if (in >> rest) throw std::invalid_argument("pose: trailing tokens after 7 numbers");
  return {Vec3{tx, ty, tz}, UnitQuaternion::make(qw, qx, qy, qz)};
}

inline std::string format_pose(const Pose& p) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g %.17g %.17g", p.translation.x,
                p.translation.y, p.translation.z, p.rotation.w, p.rotation.x, p.rotation.y,
                p.rotation.z);
  return buf;
}

inline std::vector<Pose> load_poses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pose file: " + path.string());
  std::vector<Pose> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    try {
      out.push_back(parse_pose(line));
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline void save_poses(const std::filesystem::path& path, std::span<const Pose> poses) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write pose file: " + path.string());
  for (const Pose& p : poses) out << format_pose(p) << "\n";
  if (!out) throw std::runtime_error("error writing pose file: " + path.string());
}

}  // namespace voxloc
