#pragma once

// Handcrafted occupancy statistics over voxel worlds and a distance between
// them, used for regression comparisons between generated worlds.

#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "infinicity/core.hpp"
#include "infinicity/voxelworld.hpp"

namespace infinicity {

inline constexpr std::size_t kDefaultClassBins = 12;
inline constexpr std::size_t kHeightBins = OctreeBlock::kEdge;

struct OccupancyStats {
  std::vector<std::uint64_t> class_histogram = std::vector<std::uint64_t>(kDefaultClassBins, 0);
  std::vector<std::uint64_t> height_histogram = std::vector<std::uint64_t>(kHeightBins, 0);
  std::uint64_t occupied_voxels = 0;
  std::uint64_t exposed_faces = 0;
  std::uint64_t occupied_columns = 0;
  std::uint64_t contiguous_columns = 0;
  double surface_to_volume = 0.0;  // exposed faces / (6 * voxels)
  double column_contiguity = 0.0;  // single-run columns / occupied columns

  bool operator==(const OccupancyStats&) const = default;
};

namespace detail {

inline bool single_run(std::uint64_t m) {
  const std::uint64_t s = m >> std::countr_zero(m);
  return (s & (s + 1)) == 0;
}

}  // namespace detail

/// Exact statistics by full enumeration. Cells outside the world count as
/// empty when deciding whether a face is exposed. The class histogram has at
/// least class_bins bins and grows to fit the largest class present.
inline OccupancyStats world_stats(const VoxelWorld& world, std::size_t class_bins = kDefaultClassBins) {
  OccupancyStats s;
  s.class_histogram.assign(class_bins, 0);
  if (world.empty()) return s;
  constexpr int E = OctreeBlock::kEdge;
  const std::int64_t W = world.max_x() - world.min_x(), H = world.max_y() - world.min_y();
  std::vector<std::uint64_t> cols(static_cast<std::size_t>(W * H), 0);
  auto col = [&](std::int64_t x, std::int64_t y) -> std::uint64_t& { return cols[static_cast<std::size_t>(y * W + x)]; };

  for (const auto& b : world.blocks()) {
    const std::int64_t ox = std::int64_t{b.coord().bx} * E - world.min_x();
    const std::int64_t oy = std::int64_t{b.coord().by} * E - world.min_y();
    b.for_each([&](VoxelCoord c, const Voxel& v) {
      if (v.class_id >= s.class_histogram.size()) s.class_histogram.resize(v.class_id + 1u, 0);
      ++s.class_histogram[v.class_id];
      ++s.height_histogram[static_cast<std::size_t>(c.z)];
      col(ox + c.x, oy + c.y) |= std::uint64_t{1} << c.z;
    });
  }

  const std::uint64_t none = 0;
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      const std::uint64_t m = col(x, y);
      if (!m) continue;
      s.occupied_voxels += static_cast<std::uint64_t>(std::popcount(m));
      ++s.occupied_columns;
      s.contiguous_columns += detail::single_run(m);
      s.exposed_faces += static_cast<std::uint64_t>(std::popcount(m & ~(m << 1)) + std::popcount(m & ~(m >> 1)));
      const std::uint64_t nb[4] = {x > 0 ? col(x - 1, y) : none, x + 1 < W ? col(x + 1, y) : none,
                                   y > 0 ? col(x, y - 1) : none, y + 1 < H ? col(x, y + 1) : none};
      for (std::uint64_t n : nb) s.exposed_faces += static_cast<std::uint64_t>(std::popcount(m & ~n));
    }
  if (s.occupied_voxels) s.surface_to_volume = double(s.exposed_faces) / (6.0 * double(s.occupied_voxels));
  if (s.occupied_columns) s.column_contiguity = double(s.contiguous_columns) / double(s.occupied_columns);
  return s;
}

namespace detail {

inline double normalized_l1(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
  std::uint64_t ta = 0, tb = 0;
  for (auto v : a) ta += v;
  for (auto v : b) tb += v;
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double pa = ta ? double(a[i]) / double(ta) : 0.0;
    const double pb = tb ? double(b[i]) / double(tb) : 0.0;
    d += std::abs(pa - pb);
  }
  return d;
}

}  // namespace detail

/// L1 distance between normalized class and height histograms plus the
/// absolute differences of the two ratios.
inline double stats_distance(const OccupancyStats& a, const OccupancyStats& b) {
  if (a.class_histogram.size() != b.class_histogram.size())
    throw InvalidArgument("class histogram bins differ: " + std::to_string(a.class_histogram.size()) + " vs " +
                          std::to_string(b.class_histogram.size()));
  if (a.height_histogram.size() != b.height_histogram.size())
    throw InvalidArgument("height histogram bins differ: " + std::to_string(a.height_histogram.size()) + " vs " +
                          std::to_string(b.height_histogram.size()));
  return detail::normalized_l1(a.class_histogram, b.class_histogram) +
         detail::normalized_l1(a.height_histogram, b.height_histogram) +
         std::abs(a.surface_to_volume - b.surface_to_volume) + std::abs(a.column_contiguity - b.column_contiguity);
}

inline nlohmann::json to_json(const OccupancyStats& s) {
  return {{"class_histogram", s.class_histogram},     {"height_histogram", s.height_histogram},
          {"occupied_voxels", s.occupied_voxels},     {"exposed_faces", s.exposed_faces},
          {"occupied_columns", s.occupied_columns},   {"contiguous_columns", s.contiguous_columns},
          {"surface_to_volume", s.surface_to_volume}, {"column_contiguity", s.column_contiguity}};
}

inline OccupancyStats stats_from_json(const nlohmann::json& j) {
  try {
    OccupancyStats s;
    s.class_histogram = j.at("class_histogram").get<std::vector<std::uint64_t>>();
    s.height_histogram = j.at("height_histogram").get<std::vector<std::uint64_t>>();
    s.occupied_voxels = j.at("occupied_voxels").get<std::uint64_t>();
    s.exposed_faces = j.at("exposed_faces").get<std::uint64_t>();
    s.occupied_columns = j.at("occupied_columns").get<std::uint64_t>();
    s.contiguous_columns = j.at("contiguous_columns").get<std::uint64_t>();
    s.surface_to_volume = j.at("surface_to_volume").get<double>();
    s.column_contiguity = j.at("column_contiguity").get<double>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed stats: ") + e.what());
  }
}

}  // namespace infinicity
