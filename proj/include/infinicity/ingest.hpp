#pragma once

// Mesh -> surface points -> voxel blocks -> top-down CDN tiles.
//
// Mesh text format (.tmesh), one record per line, '#' starts a comment:
//
//   v <x> <y> <z>              vertex, metres
//   t <i> <j> <k> <class_id>   triangle over 0-based vertex indices
//
// Triangles are wound counter-clockwise seen from outside; the outward
// normal is (v_j - v_i) x (v_k - v_i), normalised.

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "infinicity/core.hpp"
#include "infinicity/octree.hpp"
#include "infinicity/satmap.hpp"

namespace infinicity {

struct Triangle {
  std::array<std::uint32_t, 3> v{};
  ClassId class_id = 0;
};

struct LabeledMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;

  /// Unit outward normal from winding; zero vector for a degenerate face.
  Vec3 normal(const Triangle& t) const {
    const Vec3 a = vertices[t.v[0]], b = vertices[t.v[1]], c = vertices[t.v[2]];
    const Vec3 n = cross(b - a, c - a);
    const double len = length(n);
    return len > 0.0 ? n / len : Vec3{};
  }

  double area(const Triangle& t) const {
    const Vec3 a = vertices[t.v[0]], b = vertices[t.v[1]], c = vertices[t.v[2]];
    return 0.5 * length(cross(b - a, c - a));
  }

  void validate() const {
    for (const auto& t : triangles)
      for (auto i : t.v)
        if (i >= vertices.size()) throw OutOfRange("triangle index " + std::to_string(i) + " out of range");
  }
};

inline LabeledMesh parse_tmesh(std::string_view text) {
  LabeledMesh mesh;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    const std::size_t line_start = pos;
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream in(line);
    std::string kind;
    if (!(in >> kind)) continue;
    auto fail = [&](const std::string& why) {
      throw ParseError(line_start, "line " + std::to_string(line_no) + ": " + why);
    };
    if (kind == "v") {
      Vec3 p;
      if (!(in >> p.x >> p.y >> p.z)) fail("expected three vertex coordinates");
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) fail("non-finite vertex");
      mesh.vertices.push_back(p);
    } else if (kind == "t") {
      long long i, j, k, c;
      if (!(in >> i >> j >> k >> c)) fail("expected three indices and a class id");
      for (long long idx : {i, j, k})
        if (idx < 0 || static_cast<std::size_t>(idx) >= mesh.vertices.size())
          fail("vertex index " + std::to_string(idx) + " out of range");
      if (c < 0 || c > 255) fail("class id out of range");
      mesh.triangles.push_back({{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
                                 static_cast<std::uint32_t>(k)},
                                static_cast<ClassId>(c)});
    } else {
      fail("unknown record '" + kind + "'");
    }
    std::string rest;
    if (in >> rest) fail("unexpected trailing token '" + rest + "'");
  }
  return mesh;
}

inline std::string format_tmesh(const LabeledMesh& mesh) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x << ' ' << v.y << ' ' << v.z << '\n';
  for (const auto& t : mesh.triangles)
    out << "t " << t.v[0] << ' ' << t.v[1] << ' ' << t.v[2] << ' ' << int(t.class_id) << '\n';
  return out.str();
}

struct SurfacePoint {
  Vec3 position;
  ClassId class_id = 0;
  Vec3 normal;
};

using SurfacePointSet = std::vector<SurfacePoint>;

namespace detail {

// In-plane frame shared by every triangle lying in the same plane, so that
// coplanar neighbours sample one common lattice.
struct PlaneFrame {
  Vec3 u, v, origin;
};

inline PlaneFrame plane_frame(Vec3 n, Vec3 p0) {
  int axis = 0;
  for (int k = 1; k < 3; ++k)
    if (std::abs(n[k]) < std::abs(n[axis])) axis = k;
  Vec3 e{};
  e[axis] = 1.0;
  const Vec3 u = normalize(e - n * dot(e, n));
  return {u, cross(n, u), n * dot(p0, n)};
}

// Top-left fill rule on a counter-clockwise triangle in (u, v) coordinates:
// points on a shared edge belong to exactly one of the two triangles.
inline bool inside_top_left(const std::array<std::array<double, 2>, 3>& t, double pu, double pv) {
  for (int k = 0; k < 3; ++k) {
    const auto& a = t[static_cast<std::size_t>(k)];
    const auto& b = t[static_cast<std::size_t>((k + 1) % 3)];
    const double ex = b[0] - a[0], ey = b[1] - a[1];
    const double e = ex * (pv - a[1]) - ey * (pu - a[0]);
    if (e > 0.0) continue;
    if (e < 0.0) return false;
    const bool top = ey == 0.0 && ex < 0.0;
    const bool left = ey < 0.0;
    if (!top && !left) return false;
  }
  return true;
}

}  // namespace detail

/// Equal-spacing surface sampling: each triangle is covered by the square
/// lattice of pitch voxel_size/4 laid out in its plane, one sample at the
/// centre of every lattice cell whose centre lies inside the triangle.
inline SurfacePointSet sample_surface(const LabeledMesh& mesh, double voxel_size_m) {
  if (!(voxel_size_m > 0.0)) throw InvalidArgument("voxel size must be positive");
  mesh.validate();
  const double s = voxel_size_m / 4.0;
  SurfacePointSet out;
  for (const auto& tri : mesh.triangles) {
    if (mesh.area(tri) <= 0.0) continue;
    const Vec3 n = mesh.normal(tri);
    const Vec3 p0 = mesh.vertices[tri.v[0]];
    const auto frame = detail::plane_frame(n, p0);
    std::array<std::array<double, 2>, 3> uv{};
    double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
    for (int k = 0; k < 3; ++k) {
      const Vec3 p = mesh.vertices[tri.v[static_cast<std::size_t>(k)]];
      uv[static_cast<std::size_t>(k)] = {dot(p, frame.u), dot(p, frame.v)};
      umin = std::min(umin, uv[static_cast<std::size_t>(k)][0]);
      umax = std::max(umax, uv[static_cast<std::size_t>(k)][0]);
      vmin = std::min(vmin, uv[static_cast<std::size_t>(k)][1]);
      vmax = std::max(vmax, uv[static_cast<std::size_t>(k)][1]);
    }
    const auto a0 = static_cast<long long>(std::ceil(umin / s - 0.5)), a1 = static_cast<long long>(std::floor(umax / s - 0.5));
    const auto b0 = static_cast<long long>(std::ceil(vmin / s - 0.5)), b1 = static_cast<long long>(std::floor(vmax / s - 0.5));
    for (long long b = b0; b <= b1; ++b)
      for (long long a = a0; a <= a1; ++a) {
        const double pu = (static_cast<double>(a) + 0.5) * s, pv = (static_cast<double>(b) + 0.5) * s;
        if (!detail::inside_top_left(uv, pu, pv)) continue;
        out.push_back({frame.origin + frame.u * pu + frame.v * pv, tri.class_id, n});
      }
  }
  return out;
}

/// Majority-vote voxelisation of the points falling in the 64^3 m block at
/// block_origin (1 m voxels). Ties go to the lowest class id; the normal is
/// the normalised mean, or +z when the mean vanishes. Accumulation is in
/// fixed point, so the result does not depend on point order.
inline OctreeBlock voxelize(const SurfacePointSet& points, Vec3 block_origin) {
  struct Acc {
    std::array<std::uint32_t, 256> votes{};
    std::array<std::int64_t, 3> sum{};
  };
  constexpr double kScale = 1 << 30;
  std::map<VoxelCoord, Acc> acc;
  for (const auto& p : points) {
    const Vec3 local = p.position - block_origin;
    const VoxelCoord c{static_cast<int>(std::floor(local.x)), static_cast<int>(std::floor(local.y)),
                       static_cast<int>(std::floor(local.z))};
    if (!OctreeBlock::in_bounds(c.x, c.y, c.z)) continue;
    auto& a = acc[c];
    ++a.votes[p.class_id];
    for (int k = 0; k < 3; ++k) a.sum[static_cast<std::size_t>(k)] += std::llround(p.normal[k] * kScale);
  }
  OctreeBlock block({static_cast<std::int32_t>(std::floor(block_origin.x / OctreeBlock::kEdge)),
                     static_cast<std::int32_t>(std::floor(block_origin.y / OctreeBlock::kEdge))});
  for (const auto& [c, a] : acc) {
    Voxel v;
    std::uint32_t best = 0;
    for (std::size_t k = 0; k < a.votes.size(); ++k)
      if (a.votes[k] > best) {
        best = a.votes[k];
        v.class_id = static_cast<ClassId>(k);
      }
    const Vec3 mean{static_cast<double>(a.sum[0]), static_cast<double>(a.sum[1]), static_cast<double>(a.sum[2])};
    v.normal = (a.sum[0] == 0 && a.sum[1] == 0 && a.sum[2] == 0) ? pack_normal(kUp) : pack_normal(mean);
    block.set(c.x, c.y, c.z, v);
  }
  return block;
}

/// First hit from above per column.
inline CdnTile topdown_scan(const OctreeBlock& block) {
  constexpr int E = OctreeBlock::kEdge;
  CdnTile tile(E, E);
  Grid2<int> top(E, E, -1);
  block.for_each([&](VoxelCoord c, const Voxel& v) {
    if (c.z <= top(c.x, c.y)) return;
    top(c.x, c.y) = c.z;
    tile.category(c.x, c.y) = v.class_id;
    tile.height_m(c.x, c.y) = static_cast<std::uint16_t>(c.z);
    tile.normal(c.x, c.y) = v.normal;
  });
  return tile;
}

/// Samples a whole mesh and voxelises it into every 64^3 block it touches.
/// Geometry outside z in [0, 64) is dropped.
inline std::map<BlockCoord, OctreeBlock> ingest_mesh(const LabeledMesh& mesh, double voxel_size_m = 1.0) {
  const SurfacePointSet points = sample_surface(mesh, voxel_size_m);
  std::map<BlockCoord, SurfacePointSet> by_block;
  for (const auto& p : points) {
    if (p.position.z < 0.0 || p.position.z >= kWorldHeight) continue;
    by_block[{static_cast<std::int32_t>(std::floor(p.position.x / OctreeBlock::kEdge)),
              static_cast<std::int32_t>(std::floor(p.position.y / OctreeBlock::kEdge))}]
        .push_back(p);
  }
  std::map<BlockCoord, OctreeBlock> out;
  for (const auto& [bc, pts] : by_block) {
    const Vec3 origin{double(bc.bx) * OctreeBlock::kEdge, double(bc.by) * OctreeBlock::kEdge, 0.0};
    OctreeBlock b = voxelize(pts, origin);
    if (!b.empty()) out.emplace(bc, std::move(b));
  }
  return out;
}

}  // namespace infinicity
