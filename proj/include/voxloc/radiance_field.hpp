#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "voxloc/geometry.hpp"

namespace voxloc {

struct Rgb {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;
};

/// Explicit radiance field: per-cell volume density (1/m) and RGB color over
/// an axis-aligned box. Cells are laid out x-fastest, then y, then z.
struct VoxelGrid {
  int nx = 0, ny = 0, nz = 0;
  Vec3 bbox_min;
  Vec3 bbox_max;
  std::vector<double> density;  // nx*ny*nz
  std::vector<double> color;    // 3 * nx*ny*nz, rgb interleaved per cell

  std::size_t cell_count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(nx) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(ny) * k);
  }
  Vec3 cell_size() const {
    return {(bbox_max.x - bbox_min.x) / nx, (bbox_max.y - bbox_min.y) / ny,
            (bbox_max.z - bbox_min.z) / nz};
  }
  Vec3 cell_center(int i, int j, int k) const {
    const Vec3 cs = cell_size();
    return {bbox_min.x + (i + 0.5) * cs.x, bbox_min.y + (j + 0.5) * cs.y,
            bbox_min.z + (k + 0.5) * cs.z};
  }
  bool contains(const Vec3& p) const {
    return p.x >= bbox_min.x && p.x <= bbox_max.x && p.y >= bbox_min.y && p.y <= bbox_max.y &&
           p.z >= bbox_min.z && p.z <= bbox_max.z;
  }
};

inline VoxelGrid make_grid(int nx, int ny, int nz, const Vec3& bbox_min, const Vec3& bbox_max) {
  if (nx < 1 || ny < 1 || nz < 1)
    throw std::invalid_argument("grid dimensions must be positive");
  if (!(bbox_min.x < bbox_max.x) || !(bbox_min.y < bbox_max.y) || !(bbox_min.z < bbox_max.z))
    throw std::invalid_argument("grid bbox must have min < max per axis");
  VoxelGrid g;
  g.nx = nx;
  g.ny = ny;
  g.nz = nz;
  g.bbox_min = bbox_min;
  g.bbox_max = bbox_max;
  g.density.assign(g.cell_count(), 0.0);
  g.color.assign(3 * g.cell_count(), 0.0);
  return g;
}

/// Interpolation stencil at a point: up to 8 cells with convex weights.
/// count == 0 marks a point outside the bbox.
struct TrilinearStencil {
  std::array<std::size_t, 8> cell{};
  std::array<double, 8> weight{};
  int count = 0;
};

// Trilinear interpolation over cell centers with clamp-to-edge behavior in the
// half-cell margin along the bbox faces.
inline TrilinearStencil trilinear_stencil(const VoxelGrid& grid, const Vec3& p) {
  TrilinearStencil st;
  if (!grid.contains(p)) return st;
  const Vec3 cs = grid.cell_size();
  const double gx = (p.x - grid.bbox_min.x) / cs.x - 0.5;
  const double gy = (p.y - grid.bbox_min.y) / cs.y - 0.5;
  const double gz = (p.z - grid.bbox_min.z) / cs.z - 0.5;
  const double fx = std::floor(gx), fy = std::floor(gy), fz = std::floor(gz);
  const double wx = gx - fx, wy = gy - fy, wz = gz - fz;
  const auto clampi = [](double v, int n) {
    return std::clamp(static_cast<int>(v), 0, n - 1);
  };
  const int x0 = clampi(fx, grid.nx), x1 = clampi(fx + 1.0, grid.nx);
  const int y0 = clampi(fy, grid.ny), y1 = clampi(fy + 1.0, grid.ny);
  const int z0 = clampi(fz, grid.nz), z1 = clampi(fz + 1.0, grid.nz);
  const double wxs[2] = {1.0 - wx, wx};
  const double wys[2] = {1.0 - wy, wy};
  const double wzs[2] = {1.0 - wz, wz};
  const int xs[2] = {x0, x1}, ys[2] = {y0, y1}, zs[2] = {z0, z1};
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        st.cell[st.count] = grid.index(xs[dx], ys[dy], zs[dz]);
        st.weight[st.count] = wxs[dx] * wys[dy] * wzs[dz];
        ++st.count;
      }
  return st;
}

struct FieldSample {
  double sigma = 0.0;
  Rgb rgb;
};

// The view direction is accepted for interface stability; the stored field is
// view-independent. Points outside the bbox sample as empty space.
inline FieldSample sample_field(const VoxelGrid& grid, const Vec3& point,
                                const Vec3& /*direction*/ = Vec3{0, 0, -1}) {
  const TrilinearStencil st = trilinear_stencil(grid, point);
  FieldSample out;
  for (int i = 0; i < st.count; ++i) {
    const double w = st.weight[i];
    const std::size_t c = st.cell[i];
    out.sigma += w * grid.density[c];
    out.rgb.r += w * grid.color[3 * c + 0];
    out.rgb.g += w * grid.color[3 * c + 1];
    out.rgb.b += w * grid.color[3 * c + 2];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Procedural scenes
// ---------------------------------------------------------------------------

struct SphereShape {
  Vec3 center;
  double radius = 0.0;
};

struct BoxShape {
  Vec3 min;
  Vec3 max;
};

struct ScenePrimitive {
  std::variant<SphereShape, BoxShape> shape;
  double density = 0.0;
  Rgb color;
};

/// Declarative synthetic scene: a bounded box plus a list of solid primitives.
struct SceneSpec {
  Vec3 bbox_min{-1.0, -1.0, -1.0};
  Vec3 bbox_max{1.0, 1.0, 1.0};
  std::vector<ScenePrimitive> primitives;
  double background_density = 0.0;
  Rgb background_color;
};

inline void validate(const SceneSpec& spec) {
  if (!(spec.bbox_min.x < spec.bbox_max.x) || !(spec.bbox_min.y < spec.bbox_max.y) ||
      !(spec.bbox_min.z < spec.bbox_max.z))
    throw std::invalid_argument("scene bbox must have min < max per axis");
  if (spec.background_density < 0.0)
    throw std::invalid_argument("scene background density must be nonnegative");
  const auto inside = [&](const Vec3& p) {
    return p.x >= spec.bbox_min.x && p.x <= spec.bbox_max.x && p.y >= spec.bbox_min.y &&
           p.y <= spec.bbox_max.y && p.z >= spec.bbox_min.z && p.z <= spec.bbox_max.z;
  };
  for (const ScenePrimitive& prim : spec.primitives) {
    if (prim.density < 0.0)
      throw std::invalid_argument("scene primitive density must be nonnegative");
    if (const auto* s = std::get_if<SphereShape>(&prim.shape)) {
      if (s->radius < 0.0) throw std::invalid_argument("sphere radius must be nonnegative");
      const Vec3 r{s->radius, s->radius, s->radius};
      if (!inside(s->center - r) || !inside(s->center + r))
        throw std::invalid_argument("sphere primitive extends outside the scene bbox");
    } else {
      const auto& b = std::get<BoxShape>(prim.shape);
      if (!inside(b.min) || !inside(b.max) || !(b.min.x <= b.max.x) || !(b.min.y <= b.max.y) ||
          !(b.min.z <= b.max.z))
        throw std::invalid_argument("box primitive extends outside the scene bbox");
    }
  }
}

// Voxelizes by cell-center membership; later primitives overwrite earlier
// ones where they overlap.
inline VoxelGrid build_procedural_scene(const SceneSpec& spec, int nx, int ny, int nz) {
  validate(spec);
  VoxelGrid grid = make_grid(nx, ny, nz, spec.bbox_min, spec.bbox_max);
  for (std::size_t c = 0; c < grid.cell_count(); ++c) {
    grid.density[c] = spec.background_density;
    grid.color[3 * c + 0] = spec.background_color.r;
    grid.color[3 * c + 1] = spec.background_color.g;
    grid.color[3 * c + 2] = spec.background_color.b;
  }
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const Vec3 p = grid.cell_center(i, j, k);
        const std::size_t c = grid.index(i, j, k);
        for (const ScenePrimitive& prim : spec.primitives) {
          bool hit = false;
          if (const auto* s = std::get_if<SphereShape>(&prim.shape)) {
            hit = (p - s->center).norm() <= s->radius;
          } else {
            const auto& b = std::get<BoxShape>(prim.shape);
            hit = p.x >= b.min.x && p.x <= b.max.x && p.y >= b.min.y && p.y <= b.max.y &&
                  p.z >= b.min.z && p.z <= b.max.z;
          }
          if (hit) {
            grid.density[c] = prim.density;
            grid.color[3 * c + 0] = prim.color.r;
            grid.color[3 * c + 1] = prim.color.g;
            grid.color[3 * c + 2] = prim.color.b;
          }
        }
      }
  return grid;
}

// ---------------------------------------------------------------------------
// Scene spec text format. One directive per line, `#` starts a comment:
//   bbox minx miny minz maxx maxy maxz
//   background density r g b
//   sphere cx cy cz radius density r g b
//   box minx miny minz maxx maxy maxz density r g b
// ---------------------------------------------------------------------------

namespace detail {

// Handles one scene directive; returns false when the word is not a scene
// directive so callers embedding scene lines can try their own keys.
inline bool parse_scene_directive(SceneSpec& spec, const std::string& word, std::istringstream& ls,
                                  const std::function<void(const std::string&)>& fail) {
  if (word == "bbox") {
    if (!(ls >> spec.bbox_min.x >> spec.bbox_min.y >> spec.bbox_min.z >> spec.bbox_max.x >>
          spec.bbox_max.y >> spec.bbox_max.z))
      fail("bbox expects 6 numbers");
  } else if (word == "background") {
    if (!(ls >> spec.background_density >> spec.background_color.r >> spec.background_color.g >>
          spec.background_color.b))
      fail("background expects density r g b");
  } else if (word == "sphere") {
    SphereShape s;
    ScenePrimitive prim;
    if (!(ls >> s.center.x >> s.center.y >> s.center.z >> s.radius >> prim.density >>
          prim.color.r >> prim.color.g >> prim.color.b))
      fail("sphere expects cx cy cz radius density r g b");
    prim.shape = s;
    spec.primitives.push_back(prim);
  } else if (word == "box") {
    BoxShape b;
    ScenePrimitive prim;
    if (!(ls >> b.min.x >> b.min.y >> b.min.z >> b.max.x >> b.max.y >> b.max.z >> prim.density >>
          prim.color.r >> prim.color.g >> prim.color.b))
      fail("box expects minx miny minz maxx maxy maxz density r g b");
    prim.shape = b;
    spec.primitives.push_back(prim);
  } else {
    return false;
  }
  return true;
}

}  // namespace detail

inline SceneSpec parse_scene_spec(std::istream& in, const std::string& source = "<scene>") {
  SceneSpec spec;
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
    if (!detail::parse_scene_directive(spec, word, ls, fail))
      fail("unknown directive '" + word + "'");
    std::string rest;
    if (ls >> rest) fail("trailing tokens after directive");
  }
  try {
    validate(spec);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(source + ": " + e.what());
  }
  return spec;
}

inline SceneSpec load_scene_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene spec: " + path.string());
  return parse_scene_spec(in, path.string());
}

// ---------------------------------------------------------------------------
// Grid binary format (little-endian): magic "VXRF", u32 version = 1,
// u32 nx ny nz, 6 x f64 bbox, then f32 densities and f32 rgb colors, both in
// x-fastest cell order.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u32(out, static_cast<std::uint32_t>(bits));
  put_u32(out, static_cast<std::uint32_t>(bits >> 32));
}

inline bool get_u32(std::istream& in, std::uint32_t& v) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

inline bool get_f32(std::istream& in, float& v) {
  std::uint32_t bits;
  if (!get_u32(in, bits)) return false;
  std::memcpy(&v, &bits, 4);
  return true;
}

inline bool get_f64(std::istream& in, double& v) {
  std::uint32_t lo, hi;
  if (!get_u32(in, lo) || !get_u32(in, hi)) return false;
  const std::uint64_t bits = static_cast<std::uint64_t>(lo) | (static_cast<std::uint64_t>(hi) << 32);
  std::memcpy(&v, &bits, 8);
  return true;
}

}  // namespace detail

inline constexpr char kGridMagic[4] = {'V', 'X', 'R', 'F'};
inline constexpr std::uint32_t kGridVersion = 1;

inline void save_grid(const VoxelGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write grid file: " + path.string());
  out.write(kGridMagic, 4);
  detail::put_u32(out, kGridVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(grid.nx));
  detail::put_u32(out, static_cast<std::uint32_t>(grid.ny));
  detail::put_u32(out, static_cast<std::uint32_t>(grid.nz));
  detail::put_f64(out, grid.bbox_min.x);
  detail::put_f64(out, grid.bbox_min.y);
  detail::put_f64(out, grid.bbox_min.z);
  detail::put_f64(out, grid.bbox_max.x);
  detail::put_f64(out, grid.bbox_max.y);
  detail::put_f64(out, grid.bbox_max.z);
  for (double d : grid.density) detail::put_f32(out, static_cast<float>(d));
  for (double c : grid.color) detail::put_f32(out, static_cast<float>(c));
  if (!out) throw std::runtime_error("error writing grid file: " + path.string());
}

inline VoxelGrid load_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open grid file: " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kGridMagic, 4) != 0)
    throw std::runtime_error("grid file " + path.string() + ": bad magic, expected VXRF");
  std::uint32_t version, nx, ny, nz;
  if (!detail::get_u32(in, version) || !detail::get_u32(in, nx) || !detail::get_u32(in, ny) ||
      !detail::get_u32(in, nz))
    throw std::runtime_error("grid file " + path.string() + ": truncated header");
  if (version != kGridVersion)
    throw std::runtime_error("grid file " + path.string() + ": unsupported version " +
                             std::to_string(version));
  if (nx < 1 || ny < 1 || nz < 1 || static_cast<std::uint64_t>(nx) * ny * nz > (1ULL << 31))
    throw std::runtime_error("grid file " + path.string() + ": invalid dimensions");
  Vec3 bmin, bmax;
  if (!detail::get_f64(in, bmin.x) || !detail::get_f64(in, bmin.y) || !detail::get_f64(in, bmin.z) ||
      !detail::get_f64(in, bmax.x) || !detail::get_f64(in, bmax.y) || !detail::get_f64(in, bmax.z))
    throw std::runtime_error("grid file " + path.string() + ": truncated header");
  VoxelGrid grid = make_grid(static_cast<int>(nx), static_cast<int>(ny), static_cast<int>(nz),
                             bmin, bmax);
  for (double& d : grid.density) {
    float f;
    if (!detail::get_f32(in, f))
      throw std::runtime_error("grid file " + path.string() +
                               ": length inconsistent with dimensions (density payload)");
    if (!(f >= 0.0f) || !std::isfinite(f))
      throw std::runtime_error("grid file " + path.string() + ": density out of range");
    d = f;
  }
  for (double& c : grid.color) {
    float f;
    if (!detail::get_f32(in, f))
      throw std::runtime_error("grid file " + path.string() +
                               ": length inconsistent with dimensions (color payload)");
    if (!(f >= 0.0f) || !(f <= 1.0f))
      throw std::runtime_error("grid file " + path.string() + ": color channel out of [0,1]");
    c = f;
  }
  if (in.peek() != std::istream::traits_type::eof())
    throw std::runtime_error("grid file " + path.string() + ": trailing bytes after payload");
  return grid;
}

}  // namespace voxloc
