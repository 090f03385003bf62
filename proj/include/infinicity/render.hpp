#pragma once

// First-hit voxel ray casting with octree empty-space skipping, eight-corner
// trilinear feature retrieval, and a fixed shader.

#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <numbers>
#include <thread>
#include <vector>

#include <json.hpp>

#include "infinicity/core.hpp"
#include "infinicity/satmap.hpp"
#include "infinicity/voxelworld.hpp"

namespace infinicity {

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length

  Ray() = default;
  Ray(Vec3 o, Vec3 d) : origin(o), direction(d) {
    if (std::abs(length(d) - 1.0) > 1e-9) throw InvalidArgument("ray direction must be unit length");
  }
};

struct HitRecord {
  bool hit = false;
  std::array<std::int64_t, 3> voxel{};
  Vec3 entry;
  double t = std::numeric_limits<double>::infinity();
  Vec3 face_normal;  // zero when the ray starts inside the hit voxel
  ClassId class_id = cls::kSky;
  Voxel payload;
};

/// Nudge applied to the entry parameter when picking the starting cell, so
/// a ray entering exactly on an edge or corner starts in the cell it moves
/// into.
inline constexpr double kEntryNudge = 1e-9;

/// First occupied voxel along the ray with t <= t_max. Cells are visited in
/// non-decreasing t; any empty octree node the ray is inside is crossed in
/// one step.
inline HitRecord traverse(const VoxelWorld& world, const Ray& ray, double t_max) {
  if (!(t_max > 0.0)) throw InvalidArgument("t_max must be positive");
  HitRecord rec;
  if (world.empty()) return rec;
  const Vec3 o = ray.origin, d = ray.direction;
  const double lo[3] = {double(world.min_x()), double(world.min_y()), 0.0};
  const double hi[3] = {double(world.max_x()), double(world.max_y()), double(OctreeBlock::kEdge)};

  double t0 = 0.0, t1 = t_max;
  int axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < lo[a] || o[a] >= hi[a]) return rec;
      continue;
    }
    double ta = (lo[a] - o[a]) / d[a], tb = (hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis = a;
    }
    t1 = std::min(t1, tb);
  }
  if (t0 >= t1) return rec;

  std::int64_t cell[3];
  for (int a = 0; a < 3; ++a) {
    if (a == axis) {
      cell[a] = d[a] > 0.0 ? static_cast<std::int64_t>(lo[a]) : static_cast<std::int64_t>(hi[a]) - 1;
    } else {
      const double p = o[a] + d[a] * (t0 + kEntryNudge);
      cell[a] = std::clamp(static_cast<std::int64_t>(std::floor(p)), static_cast<std::int64_t>(lo[a]),
                           static_cast<std::int64_t>(hi[a]) - 1);
    }
  }

  double t_in = t0;
  for (int guard = 0; guard < 1 << 24; ++guard) {
    if (t_in > t_max) return rec;
    const OctreeBlock* block = world.block_at(cell[0], cell[1]);
    const std::int64_t bx = floor_div(cell[0], OctreeBlock::kEdge) * OctreeBlock::kEdge;
    const std::int64_t by = floor_div(cell[1], OctreeBlock::kEdge) * OctreeBlock::kEdge;
    const int local[3] = {static_cast<int>(cell[0] - bx), static_cast<int>(cell[1] - by), static_cast<int>(cell[2])};
    const int s = block->empty_extent(local[0], local[1], local[2]);
    if (s == 0) {
      rec.hit = true;
      rec.voxel = {cell[0], cell[1], cell[2]};
      rec.t = t_in;
      rec.entry = o + d * t_in;
      if (axis >= 0) {
        rec.entry[axis] = static_cast<double>(d[axis] > 0.0 ? cell[axis] : cell[axis] + 1);
        rec.face_normal[axis] = d[axis] > 0.0 ? -1.0 : 1.0;
      }
      rec.payload = *block->get(local[0], local[1], local[2]);
      rec.class_id = rec.payload.class_id;
      return rec;
    }
    // Leave the empty aligned cube of edge s containing the cell.
    const std::int64_t base[3] = {bx, by, 0};
    std::int64_t cube_lo[3];
    for (int a = 0; a < 3; ++a) cube_lo[a] = base[a] + (local[a] / s) * s;
    double t_exit = std::numeric_limits<double>::infinity();
    int exit_axis = -1;
    for (int a = 0; a < 3; ++a) {
      if (d[a] == 0.0) continue;
      const double bound = d[a] > 0.0 ? double(cube_lo[a] + s) : double(cube_lo[a]);
      const double t = (bound - o[a]) / d[a];
      if (t < t_exit) {
        t_exit = t;
        exit_axis = a;
      }
    }
    t_exit = std::max(t_exit, t_in);
    for (int a = 0; a < 3; ++a) {
      if (a == exit_axis) {
        cell[a] = d[a] > 0.0 ? cube_lo[a] + s : cube_lo[a] - 1;
      } else {
        const double p = o[a] + d[a] * t_exit;
        cell[a] = std::clamp(static_cast<std::int64_t>(std::floor(p)), cube_lo[a], cube_lo[a] + s - 1);
      }
      if (cell[a] < static_cast<std::int64_t>(lo[a]) || cell[a] >= static_cast<std::int64_t>(hi[a])) return rec;
    }
    t_in = t_exit;
    axis = exit_axis;
  }
  throw Error("traverse: step limit exceeded");
}

// ---------------------------------------------------------------------------
// Corner features

/// Weights of the eight corners (index bit 0 = +x, bit 1 = +y, bit 2 = +z)
/// for fractional position f in [0, 1]^3.
inline std::array<double, 8> trilinear_weights(Vec3 f) {
  std::array<double, 8> w{};
  for (int k = 0; k < 8; ++k)
    w[static_cast<std::size_t>(k)] =
        ((k & 1) ? f.x : 1.0 - f.x) * ((k & 2) ? f.y : 1.0 - f.y) * ((k & 4) ? f.z : 1.0 - f.z);
  return w;
}

/// Trilinear blend of the eight corner features of an occupied voxel; the
/// point is clamped onto the voxel's closed cube.
inline CornerFeature trilinear_features(const VoxelWorld& world, const std::array<std::int64_t, 3>& voxel, Vec3 p) {
  if (!world.occupied(voxel[0], voxel[1], voxel[2])) throw InvalidArgument("feature lookup in an empty voxel");
  const Vec3 f{std::clamp(p.x - double(voxel[0]), 0.0, 1.0), std::clamp(p.y - double(voxel[1]), 0.0, 1.0),
               std::clamp(p.z - double(voxel[2]), 0.0, 1.0)};
  const auto w = trilinear_weights(f);
  std::array<double, kCornerFeatureDim> acc{};
  for (int k = 0; k < 8; ++k) {
    if (w[static_cast<std::size_t>(k)] == 0.0) continue;
    const CornerFeature c = world.corner_feature(voxel[0] + (k & 1), voxel[1] + ((k >> 1) & 1), voxel[2] + ((k >> 2) & 1));
    for (int i = 0; i < kCornerFeatureDim; ++i)
      acc[static_cast<std::size_t>(i)] += w[static_cast<std::size_t>(k)] * c[static_cast<std::size_t>(i)];
  }
  CornerFeature out{};
  for (int i = 0; i < kCornerFeatureDim; ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(acc[static_cast<std::size_t>(i)]);
  return out;
}

/// As above, for a point given alone: it must lie in the closed cube of
/// some occupied voxel (the floor cell is preferred).
inline CornerFeature trilinear_features(const VoxelWorld& world, Vec3 p) {
  const std::int64_t fx = static_cast<std::int64_t>(std::floor(p.x)), fy = static_cast<std::int64_t>(std::floor(p.y)),
                     fz = static_cast<std::int64_t>(std::floor(p.z));
  for (int dz = 0; dz >= -1; --dz)
    for (int dy = 0; dy >= -1; --dy)
      for (int dx = 0; dx >= -1; --dx) {
        if ((dx && p.x != double(fx)) || (dy && p.y != double(fy)) || (dz && p.z != double(fz))) continue;
        if (world.occupied(fx + dx, fy + dy, fz + dz)) return trilinear_features(world, {fx + dx, fy + dy, fz + dz}, p);
      }
  throw InvalidArgument("feature lookup point is in empty space");
}

// ---------------------------------------------------------------------------
// Camera

/// Yaw turns about +z from +x; positive pitch looks down; roll turns the
/// image about the viewing axis. Angles in degrees.
struct CameraPose {
  Vec3 position;
  double yaw = 0.0, pitch = 0.0, roll = 0.0;
  friend bool operator==(const CameraPose&, const CameraPose&) = default;
};

inline void to_json(nlohmann::json& j, const CameraPose& p) {
  j = {{"x", p.position.x}, {"y", p.position.y}, {"z", p.position.z},
       {"yaw", p.yaw},      {"pitch", p.pitch},  {"roll", p.roll}};
}

inline void from_json(const nlohmann::json& j, CameraPose& p) {
  p.position = {j.at("x").get<double>(), j.at("y").get<double>(), j.at("z").get<double>()};
  p.yaw = j.value("yaw", 0.0);
  p.pitch = j.value("pitch", 0.0);
  p.roll = j.value("roll", 0.0);
}

struct Intrinsics {
  int width = 256, height = 256;
  double vertical_fov_deg = 60.0;

  void validate() const {
    if (width <= 0 || height <= 0) throw InvalidArgument("image size must be positive");
    if (!(vertical_fov_deg > 0.0 && vertical_fov_deg < 180.0)) throw InvalidArgument("fov must be in (0, 180)");
  }
};

struct CameraBasis {
  Vec3 forward, right, up;
};

inline CameraBasis camera_basis(const CameraPose& pose) {
  constexpr double r = std::numbers::pi / 180.0;
  const double cy = std::cos(pose.yaw * r), sy = std::sin(pose.yaw * r);
  const double cp = std::cos(pose.pitch * r), sp = std::sin(pose.pitch * r);
  const Vec3 f{cp * cy, cp * sy, -sp};
  const Vec3 right0{sy, -cy, 0.0};
  const Vec3 up0 = cross(right0, f);
  const double cr = std::cos(pose.roll * r), sr = std::sin(pose.roll * r);
  return {f, right0 * cr + up0 * sr, up0 * cr - right0 * sr};
}

/// Ray through continuous image coordinates (u, v) in pixels, (0, 0) being
/// the top-left corner of the image.
inline Ray camera_ray(const CameraPose& pose, const Intrinsics& k, double u, double v) {
  const CameraBasis b = camera_basis(pose);
  const double tan_half = std::tan(k.vertical_fov_deg * std::numbers::pi / 360.0);
  const double aspect = double(k.width) / double(k.height);
  const double x = (2.0 * u / k.width - 1.0) * tan_half * aspect;
  const double y = (1.0 - 2.0 * v / k.height) * tan_half;
  return {pose.position, normalize(b.forward + b.right * x + b.up * y)};
}

/// Image coordinates of a world point; nullopt behind the camera.
inline std::optional<std::array<double, 2>> project(const CameraPose& pose, const Intrinsics& k, Vec3 p) {
  const CameraBasis b = camera_basis(pose);
  const Vec3 q = p - pose.position;
  const double z = dot(q, b.forward);
  if (z <= 1e-9) return std::nullopt;
  const double tan_half = std::tan(k.vertical_fov_deg * std::numbers::pi / 360.0);
  const double aspect = double(k.width) / double(k.height);
  const double x = dot(q, b.right) / z, y = dot(q, b.up) / z;
  return std::array<double, 2>{(x / (tan_half * aspect) + 1.0) * k.width / 2.0, (1.0 - y / tan_half) * k.height / 2.0};
}

// ---------------------------------------------------------------------------
// Shading

/// Stand-in for a global style code: a palette plus lighting preset.
struct RenderStyle {
  Palette palette = Palette::default_palette();
  Vec3 light_dir = normalize({0.4, 0.3, 0.85});
  double ambient = 0.35;
  double texture_amplitude = 0.08;
};

inline const std::array<double, kCornerFeatureDim>& texture_weights() {
  static const auto w = [] {
    std::array<double, kCornerFeatureDim> v{};
    for (int k = 0; k < kCornerFeatureDim; ++k)
      v[static_cast<std::size_t>(k)] = to_signed_unit(prf(0x7465787475726545ULL, static_cast<std::uint64_t>(k)));
    return v;
  }();
  return w;
}

inline Color shade(const HitRecord& hit, const CornerFeature& feature, const RenderStyle& style) {
  if (!hit.hit) return style.palette.find(cls::kSky) ? style.palette.color(cls::kSky) : Color{};
  const Vec3 n = (hit.face_normal.z > 0.5 || length(hit.face_normal) == 0.0) ? hit.payload.normal_vec() : hit.face_normal;
  const double lambert = style.ambient + (1.0 - style.ambient) * std::max(0.0, dot(n, style.light_dir));
  double s = 0.0;
  for (int k = 0; k < kCornerFeatureDim; ++k)
    s += texture_weights()[static_cast<std::size_t>(k)] * feature[static_cast<std::size_t>(k)];
  const double tex = style.texture_amplitude * std::tanh(s);
  const Color base = style.palette.find(hit.class_id) ? style.palette.color(hit.class_id) : Color{0.5, 0.5, 0.5};
  auto ch = [&](double c) { return std::clamp(c * lambert + tex, 0.0, 1.0); };
  return {ch(base.r), ch(base.g), ch(base.b)};
}

struct RenderOutput {
  Grid2<ClassId> semantic;
  Grid2<float> depth;  // metres along the ray, +inf on a miss
  Grid2<Color> shaded;
  std::vector<float> features;  // width * height * kCornerFeatureDim, row-major
  int width() const { return semantic.width(); }
  int height() const { return semantic.height(); }
  const float* feature(int x, int y) const {
    return features.data() + (static_cast<std::size_t>(y) * static_cast<std::size_t>(width()) + static_cast<std::size_t>(x)) * kCornerFeatureDim;
  }
  friend bool operator==(const RenderOutput&, const RenderOutput&) = default;
};

/// Pinhole render. Output is independent of the worker count.
inline RenderOutput render_view(const VoxelWorld& world, const CameraPose& pose, const Intrinsics& k,
                                const RenderStyle& style = {}, unsigned workers = 0,
                                double t_max = std::numeric_limits<double>::max()) {
  k.validate();
  RenderOutput out{Grid2<ClassId>(k.width, k.height, cls::kSky),
                   Grid2<float>(k.width, k.height, std::numeric_limits<float>::infinity()),
                   Grid2<Color>(k.width, k.height),
                   std::vector<float>(static_cast<std::size_t>(k.width) * static_cast<std::size_t>(k.height) * kCornerFeatureDim, 0.0f)};
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(k.height));
  auto rows = [&](unsigned w) {
    for (int y = static_cast<int>(w); y < k.height; y += static_cast<int>(workers))
      for (int x = 0; x < k.width; ++x) {
        const HitRecord hit = traverse(world, camera_ray(pose, k, x + 0.5, y + 0.5), t_max);
        CornerFeature f{};
        if (hit.hit) {
          f = trilinear_features(world, hit.voxel, hit.entry);
          out.semantic(x, y) = hit.class_id;
          out.depth(x, y) = static_cast<float>(hit.t);
          std::copy(f.begin(), f.end(), out.features.begin() + static_cast<std::ptrdiff_t>(
                                                                   (static_cast<std::size_t>(y) * static_cast<std::size_t>(k.width) +
                                                                    static_cast<std::size_t>(x)) * kCornerFeatureDim));
        }
        out.shaded(x, y) = shade(hit, f, style);
      }
  };
  if (workers == 1) {
    rows(0);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          rows(w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace infinicity
