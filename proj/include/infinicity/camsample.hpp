#pragma once

// Walkable-zone labelling from the top-down tile, mask morphology, and
// ground-level camera sampling with collision rejection.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "infinicity/core.hpp"
#include "infinicity/render.hpp"
#include "infinicity/satmap.hpp"
#include "infinicity/voxelworld.hpp"

namespace infinicity {

struct WalkableMask {
  Grid2<std::uint8_t> mask;  // 1 = walkable
  std::int64_t origin_x = 0, origin_y = 0;  // world position of pixel (0, 0)
  std::vector<std::string> provenance;

  int width() const { return mask.width(); }
  int height() const { return mask.height(); }
  bool at(int x, int y) const { return mask(x, y) != 0; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : mask.data()) n += v != 0;
    return n;
  }
};

/// Walkable class at ground level.
inline WalkableMask label_walkable(const CdnTile& tile, const Palette& palette, std::int64_t origin_x = 0,
                                   std::int64_t origin_y = 0) {
  WalkableMask m{Grid2<std::uint8_t>(tile.width(), tile.height(), 0), origin_x, origin_y, {"label_walkable"}};
  for (int y = 0; y < tile.height(); ++y)
    for (int x = 0; x < tile.width(); ++x)
      m.mask(x, y) = palette.walkable(tile.category(x, y)) && tile.height_m(x, y) == 0;
  return m;
}

/// One binary erosion with the 4-neighbour cross; pixels outside the image
/// count as not walkable.
inline Grid2<std::uint8_t> erode_cross(const Grid2<std::uint8_t>& in) {
  Grid2<std::uint8_t> out(in.width(), in.height(), 0);
  const int w = in.width(), h = in.height();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out(x, y) = in(x, y) && x > 0 && in(x - 1, y) && x + 1 < w && in(x + 1, y) && y > 0 && in(x, y - 1) &&
                  y + 1 < h && in(x, y + 1);
  return out;
}

/// Drops 4-connected components with fewer than min_px pixels.
inline Grid2<std::uint8_t> remove_small_components(const Grid2<std::uint8_t>& in, std::size_t min_px) {
  Grid2<std::uint8_t> out = in;
  Grid2<std::uint8_t> seen(in.width(), in.height(), 0);
  std::vector<std::pair<int, int>> stack, comp;
  for (int y0 = 0; y0 < in.height(); ++y0)
    for (int x0 = 0; x0 < in.width(); ++x0) {
      if (!in(x0, y0) || seen(x0, y0)) continue;
      comp.clear();
      stack.assign(1, {x0, y0});
      seen(x0, y0) = 1;
      while (!stack.empty()) {
        const auto [x, y] = stack.back();
        stack.pop_back();
        comp.push_back({x, y});
        const int nb[4][2] = {{x + 1, y}, {x - 1, y}, {x, y + 1}, {x, y - 1}};
        for (const auto& n : nb) {
          if (n[0] < 0 || n[1] < 0 || n[0] >= in.width() || n[1] >= in.height()) continue;
          if (!in(n[0], n[1]) || seen(n[0], n[1])) continue;
          seen(n[0], n[1]) = 1;
          stack.push_back({n[0], n[1]});
        }
      }
      if (comp.size() < min_px)
        for (const auto& [x, y] : comp) out(x, y) = 0;
    }
  return out;
}

inline constexpr int kMaskErosions = 3;
inline constexpr std::size_t kDefaultMinComponentPx = 400;

/// Three erosions, then small-component removal.
inline WalkableMask refine_mask(const WalkableMask& in, std::size_t min_component_px = kDefaultMinComponentPx) {
  WalkableMask out = in;
  for (int k = 0; k < kMaskErosions; ++k) {
    out.mask = erode_cross(out.mask);
    out.provenance.push_back("erode_cross");
  }
  out.mask = remove_small_components(out.mask, min_component_px);
  out.provenance.push_back("remove_components_below_" + std::to_string(min_component_px) + "px");
  return out;
}

// ---------------------------------------------------------------------------

inline constexpr double kDefaultEyeHeight = 1.7;
inline constexpr double kMaxPitchDeg = 45.0;
inline constexpr int kMaxPoseAttempts = 1000;

/// Height of the top of the solid run starting at z = 0 in a column.
inline double ground_surface(const VoxelWorld& world, std::int64_t x, std::int64_t y) {
  int z = 0;
  while (z < OctreeBlock::kEdge && world.occupied(x, y, z)) ++z;
  return z;
}

/// True when neither the voxel holding the camera nor the one above it is
/// occupied.
inline bool pose_clear(const VoxelWorld& world, const CameraPose& pose) {
  const auto x = static_cast<std::int64_t>(std::floor(pose.position.x));
  const auto y = static_cast<std::int64_t>(std::floor(pose.position.y));
  const auto z = static_cast<std::int64_t>(std::floor(pose.position.z));
  return !world.occupied(x, y, z) && !world.occupied(x, y, z + 1);
}

/// Seeded pose sampler over one mask; successive calls continue a single
/// random stream.
class CameraSampler {
 public:
  CameraSampler(const WalkableMask& mask, std::uint64_t seed)
      : rng_(seed), origin_x_(mask.origin_x), origin_y_(mask.origin_y) {
    for (int y = 0; y < mask.height(); ++y)
      for (int x = 0; x < mask.width(); ++x)
        if (mask.at(x, y)) pixels_.push_back({x, y});
  }

  CameraPose sample(const VoxelWorld& world, double eye_height_m = kDefaultEyeHeight) {
    if (pixels_.empty()) throw NoValidPose("walkable mask is empty");
    for (int attempt = 0; attempt < kMaxPoseAttempts; ++attempt) {
      const auto [px, py] = pixels_[uniform_index(pixels_.size())];
      CameraPose pose;
      pose.position.x = double(origin_x_ + px) + unit();
      pose.position.y = double(origin_y_ + py) + unit();
      pose.position.z = ground_surface(world, origin_x_ + px, origin_y_ + py) + eye_height_m;
      pose.yaw = 360.0 * unit();
      pose.pitch = kMaxPitchDeg * unit_closed();
      pose.roll = 360.0 * unit();
      if (pose_clear(world, pose)) return pose;
    }
    throw NoValidPose("no collision-free pose after " + std::to_string(kMaxPoseAttempts) + " attempts");
  }

 private:
  double unit() { return to_unit(rng_()); }
  double unit_closed() { return static_cast<double>(rng_() >> 11) / static_cast<double>((1ULL << 53) - 1); }

  // Unbiased by rejection, and identical on every standard library.
  std::size_t uniform_index(std::size_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    for (;;) {
      const std::uint64_t r = rng_();
      if (r < limit) return static_cast<std::size_t>(r % n);
    }
  }

  std::mt19937_64 rng_;
  std::int64_t origin_x_, origin_y_;
  std::vector<std::pair<int, int>> pixels_;
};

inline CameraPose sample_camera(const WalkableMask& mask, const VoxelWorld& world, std::uint64_t seed,
                                double eye_height_m = kDefaultEyeHeight) {
  return CameraSampler(mask, seed).sample(world, eye_height_m);
}

inline std::vector<CameraPose> sample_cameras(const WalkableMask& mask, const VoxelWorld& world, std::size_t n,
                                              std::uint64_t seed, double eye_height_m = kDefaultEyeHeight) {
  CameraSampler sampler(mask, seed);
  std::vector<CameraPose> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.push_back(sampler.sample(world, eye_height_m));
  return out;
}

}  // namespace infinicity
