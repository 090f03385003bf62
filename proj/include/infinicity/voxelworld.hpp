#pragma once

// Lifting CDN tiles to surface voxels, completing them (pillar or
// watertight), and assembling completed blocks into a queryable world with
// per-corner feature vectors.

#include <algorithm>
#include <array>
#include <cstdint>
#include <exception>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "infinicity/core.hpp"
#include "infinicity/octree.hpp"
#include "infinicity/satmap.hpp"

namespace infinicity {

inline constexpr int kCornerFeatureDim = 16;
using CornerFeature = std::array<float, kCornerFeatureDim>;

enum class Completion { kPillar, kWatertight };

inline std::string_view to_string(Completion c) { return c == Completion::kPillar ? "pillar" : "watertight"; }

inline Completion parse_completion(std::string_view s) {
  if (s == "pillar") return Completion::kPillar;
  if (s == "watertight") return Completion::kWatertight;
  throw InvalidArgument("unknown completion mode '" + std::string(s) + "' (pillar|watertight)");
}

/// One occupied voxel per non-void pixel, at (x, y, height).
inline OctreeBlock lift_tile(const CdnTile& tile, BlockCoord coord = {}) {
  constexpr int E = OctreeBlock::kEdge;
  if (tile.width() != E || tile.height() != E) throw InvalidArgument("lift_tile expects a 64x64 tile");
  OctreeBlock block(coord);
  for (int y = 0; y < E; ++y)
    for (int x = 0; x < E; ++x) {
      if (tile.category(x, y) == cls::kVoid) continue;
      const int h = tile.height_m(x, y);
      if (h >= E)
        throw OutOfRange("height " + std::to_string(h) + " at (" + std::to_string(x) + "," + std::to_string(y) +
                         ") exceeds the 64 m block");
      block.set(x, y, h, Voxel{tile.category(x, y), tile.normal(x, y)});
    }
  return block;
}

namespace detail {

struct SurfaceColumn {
  int x, y, z;
  Voxel voxel;
};

inline std::vector<SurfaceColumn> surface_columns(const OctreeBlock& surface) {
  std::vector<SurfaceColumn> cols;
  Grid2<std::uint8_t> seen(OctreeBlock::kEdge, OctreeBlock::kEdge, 0);
  surface.for_each([&](VoxelCoord c, const Voxel& v) {
    if (seen(c.x, c.y)) throw InvalidArgument("surface block has more than one voxel in a column");
    seen(c.x, c.y) = 1;
    cols.push_back({c.x, c.y, c.z, v});
  });
  return cols;
}

}  // namespace detail

/// Extrudes each surface voxel to the ground with its own class.
inline OctreeBlock complete_pillar(const OctreeBlock& surface) {
  OctreeBlock out(surface.coord());
  const Voxel below_normal{0, pack_normal(kUp)};
  for (const auto& c : detail::surface_columns(surface)) {
    for (int z = 0; z < c.z; ++z) out.set(c.x, c.y, z, Voxel{c.voxel.class_id, below_normal.normal});
    out.set(c.x, c.y, c.z, c.voxel);
  }
  return out;
}

inline constexpr int kCanopyThickness = 3;

/// Rule-based watertight completion: tree columns keep a three-voxel canopy
/// over a trunk column; every other class is filled to the ground.
inline OctreeBlock complete_watertight(const OctreeBlock& surface) {
  OctreeBlock out(surface.coord());
  const PackedNormal up = pack_normal(kUp);
  for (const auto& c : detail::surface_columns(surface)) {
    const bool tree = c.voxel.class_id == cls::kTree;
    const int canopy_base = tree ? std::max(0, c.z - (kCanopyThickness - 1)) : 0;
    for (int z = 0; z < c.z; ++z)
      out.set(c.x, c.y, z, Voxel{z < canopy_base ? cls::kTrunk : c.voxel.class_id, up});
    out.set(c.x, c.y, c.z, c.voxel);
  }
  return out;
}

inline OctreeBlock complete(const OctreeBlock& surface, Completion mode) {
  return mode == Completion::kPillar ? complete_pillar(surface) : complete_watertight(surface);
}

// ---------------------------------------------------------------------------

/// Immutable grid of completed blocks covering a rectangle of block
/// coordinates; world voxel (x, y, z) lives in block (floor(x/64), floor(y/64)).
class VoxelWorld {
 public:
  static constexpr int E = OctreeBlock::kEdge;

  VoxelWorld() = default;

  /// Blocks must tile a full rectangle of block coordinates exactly once.
  explicit VoxelWorld(std::vector<OctreeBlock> blocks) {
    if (blocks.empty()) return;
    std::int32_t bx0 = blocks[0].coord().bx, by0 = blocks[0].coord().by, bx1 = bx0, by1 = by0;
    for (const auto& b : blocks) {
      bx0 = std::min(bx0, b.coord().bx);
      by0 = std::min(by0, b.coord().by);
      bx1 = std::max(bx1, b.coord().bx);
      by1 = std::max(by1, b.coord().by);
    }
    bx0_ = bx0;
    by0_ = by0;
    nbx_ = bx1 - bx0 + 1;
    nby_ = by1 - by0 + 1;
    if (static_cast<std::size_t>(nbx_) * static_cast<std::size_t>(nby_) != blocks.size()) {
      const bool too_many = static_cast<std::size_t>(nbx_) * static_cast<std::size_t>(nby_) < blocks.size();
      throw InvalidArgument(too_many ? "overlapping block coordinates" : "missing block coordinates: blocks do not form a rectangle");
    }
    blocks_.resize(blocks.size());
    std::vector<bool> filled(blocks.size(), false);
    for (auto& b : blocks) {
      const std::size_t k = slot(b.coord().bx, b.coord().by);
      if (filled[k])
        throw InvalidArgument("overlapping block coordinate (" + std::to_string(b.coord().bx) + "," +
                              std::to_string(b.coord().by) + ")");
      filled[k] = true;
      blocks_[k] = std::move(b);
    }
  }

  bool empty() const { return blocks_.empty(); }
  std::int32_t block_x0() const { return bx0_; }
  std::int32_t block_y0() const { return by0_; }
  std::int32_t blocks_x() const { return nbx_; }
  std::int32_t blocks_y() const { return nby_; }
  const std::vector<OctreeBlock>& blocks() const { return blocks_; }

  std::int64_t min_x() const { return std::int64_t{bx0_} * E; }
  std::int64_t min_y() const { return std::int64_t{by0_} * E; }
  std::int64_t max_x() const { return std::int64_t{bx0_ + nbx_} * E; }
  std::int64_t max_y() const { return std::int64_t{by0_ + nby_} * E; }

  const OctreeBlock* block_at(std::int64_t x, std::int64_t y) const {
    if (blocks_.empty()) return nullptr;
    const std::int64_t bx = floor_div(x, E), by = floor_div(y, E);
    if (bx < bx0_ || by < by0_ || bx >= bx0_ + nbx_ || by >= by0_ + nby_) return nullptr;
    return &blocks_[slot(static_cast<std::int32_t>(bx), static_cast<std::int32_t>(by))];
  }

  std::optional<Voxel> get(std::int64_t x, std::int64_t y, std::int64_t z) const {
    if (z < 0 || z >= E) return std::nullopt;
    const OctreeBlock* b = block_at(x, y);
    if (!b) return std::nullopt;
    return b->get(static_cast<int>(floor_mod(x, E)), static_cast<int>(floor_mod(y, E)), static_cast<int>(z));
  }

  bool occupied(std::int64_t x, std::int64_t y, std::int64_t z) const { return get(x, y, z).has_value(); }

  std::size_t occupied_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += b.occupied_count();
    return n;
  }

  /// Feature vector at voxel corner (cx, cy, cz): the lowest class id among
  /// the occupied voxels sharing the corner picks the embedding, and the
  /// corner position modulo 8 indexes it. Zero if no incident voxel is
  /// occupied. Depends only on world occupancy, so blocks agree on shared
  /// corners.
  CornerFeature corner_feature(std::int64_t cx, std::int64_t cy, std::int64_t cz) const {
    int best = -1;
    for (int dz = -1; dz <= 0; ++dz)
      for (int dy = -1; dy <= 0; ++dy)
        for (int dx = -1; dx <= 0; ++dx)
          if (const auto v = get(cx + dx, cy + dy, cz + dz))
            if (best < 0 || v->class_id < best) best = v->class_id;
    CornerFeature f{};
    if (best < 0) return f;
    return class_corner_embedding(static_cast<ClassId>(best), cx, cy, cz);
  }

  static CornerFeature class_corner_embedding(ClassId c, std::int64_t cx, std::int64_t cy, std::int64_t cz) {
    CornerFeature f{};
    const auto mx = static_cast<std::uint64_t>(floor_mod(cx, 8)), my = static_cast<std::uint64_t>(floor_mod(cy, 8)),
               mz = static_cast<std::uint64_t>(floor_mod(cz, 8));
    for (int k = 0; k < kCornerFeatureDim; ++k)
      f[static_cast<std::size_t>(k)] =
          static_cast<float>(to_signed_unit(prf(0x636f726e6572ULL, c, mx | (my << 3) | (mz << 6), static_cast<std::uint64_t>(k))));
    return f;
  }

  friend bool operator==(const VoxelWorld& a, const VoxelWorld& b) {
    return a.bx0_ == b.bx0_ && a.by0_ == b.by0_ && a.nbx_ == b.nbx_ && a.nby_ == b.nby_ && a.blocks_ == b.blocks_;
  }

 private:
  std::size_t slot(std::int32_t bx, std::int32_t by) const {
    return static_cast<std::size_t>(by - by0_) * static_cast<std::size_t>(nbx_) + static_cast<std::size_t>(bx - bx0_);
  }

  std::int32_t bx0_ = 0, by0_ = 0, nbx_ = 0, nby_ = 0;
  std::vector<OctreeBlock> blocks_;
};

inline VoxelWorld assemble_world(std::vector<OctreeBlock> blocks) { return VoxelWorld(std::move(blocks)); }

/// Splits a tile whose sides are multiples of 64 into blocks, lifts and
/// completes each independently (in parallel), and assembles the result.
/// The tile's top-left pixel sits at block (bx0, by0).
inline VoxelWorld build_world(const CdnTile& tile, Completion mode, std::int32_t bx0 = 0, std::int32_t by0 = 0,
                              unsigned workers = 0) {
  constexpr int E = OctreeBlock::kEdge;
  if (tile.width() <= 0 || tile.height() <= 0 || tile.width() % E != 0 || tile.height() % E != 0)
    throw InvalidArgument("world extent must be a positive multiple of 64 in both directions");
  const int nbx = tile.width() / E, nby = tile.height() / E;
  std::vector<OctreeBlock> blocks(static_cast<std::size_t>(nbx) * static_cast<std::size_t>(nby));
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(blocks.size()));
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t k = w; k < blocks.size(); k += workers) {
            const int i = static_cast<int>(k % static_cast<std::size_t>(nbx)), j = static_cast<int>(k / static_cast<std::size_t>(nbx));
            const BlockCoord bc{bx0 + i, by0 + j};
            blocks[k] = complete(lift_tile(tile.crop(i * E, j * E, E, E), bc), mode);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return assemble_world(std::move(blocks));
}

/// Voxel centres, in block order then depth-first order within a block.
inline std::vector<Vec3> to_point_cloud(const VoxelWorld& world) {
  std::vector<Vec3> pts;
  pts.reserve(world.occupied_count());
  for (const auto& b : world.blocks()) {
    const double ox = double(b.coord().bx) * OctreeBlock::kEdge, oy = double(b.coord().by) * OctreeBlock::kEdge;
    b.for_each([&](VoxelCoord c, const Voxel&) { pts.push_back({ox + c.x + 0.5, oy + c.y + 0.5, c.z + 0.5}); });
  }
  return pts;
}

/// Top-down scan of the whole world, one pixel per world column.
inline CdnTile world_topdown(const VoxelWorld& world) {
  const int w = static_cast<int>(world.max_x() - world.min_x()), h = static_cast<int>(world.max_y() - world.min_y());
  CdnTile tile(w, h);
  Grid2<int> top(w, h, -1);
  for (const auto& b : world.blocks()) {
    const int ox = static_cast<int>(std::int64_t{b.coord().bx} * OctreeBlock::kEdge - world.min_x());
    const int oy = static_cast<int>(std::int64_t{b.coord().by} * OctreeBlock::kEdge - world.min_y());
    b.for_each([&](VoxelCoord c, const Voxel& v) {
      const int x = ox + c.x, y = oy + c.y;
      if (c.z <= top(x, y)) return;
      top(x, y) = c.z;
      tile.category(x, y) = v.class_id;
      tile.height_m(x, y) = static_cast<std::uint16_t>(c.z);
      tile.normal(x, y) = v.normal;
    });
  }
  return tile;
}

// ---------------------------------------------------------------------------
// .iwrl: "IWRL" | u32 version | u32 manifest length | manifest JSON |
//        per block, row-major: u32 length | .ioct bytes

inline constexpr std::uint32_t kIwrlVersion = 1;

inline std::vector<std::uint8_t> write_iwrl(const VoxelWorld& world, const nlohmann::json& extra = {}) {
  nlohmann::json manifest = extra.is_object() ? extra : nlohmann::json::object();
  manifest["block_x0"] = world.block_x0();
  manifest["block_y0"] = world.block_y0();
  manifest["blocks_x"] = world.blocks_x();
  manifest["blocks_y"] = world.blocks_y();
  manifest["occupied_voxels"] = world.occupied_count();
  const std::string text = manifest.dump();
  ByteWriter w;
  w.tag("IWRL");
  w.u32(kIwrlVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  for (const auto& b : world.blocks()) {
    const auto bytes = serialize_block(b);
    w.u32(static_cast<std::uint32_t>(bytes.size()));
    w.bytes(bytes);
  }
  return w.take();
}

struct IwrlFile {
  VoxelWorld world;
  nlohmann::json manifest;
};

inline IwrlFile read_iwrl(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("IWRL");
  const std::size_t version_at = r.offset();
  if (r.u32() != kIwrlVersion) throw ParseError(version_at, "unsupported .iwrl version");
  const std::uint32_t len = r.u32();
  const std::size_t manifest_at = r.offset();
  const auto text = r.bytes(len);
  IwrlFile f;
  try {
    f.manifest = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(manifest_at, std::string("bad world manifest: ") + e.what());
  }
  std::int64_t nbx = 0, nby = 0;
  try {
    nbx = f.manifest.at("blocks_x").get<std::int64_t>();
    nby = f.manifest.at("blocks_y").get<std::int64_t>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(manifest_at, "world manifest lacks block dimensions");
  }
  if (nbx < 0 || nby < 0 || nbx * nby > (1 << 20)) throw ParseError(manifest_at, "implausible block grid");
  std::vector<OctreeBlock> blocks;
  for (std::int64_t k = 0; k < nbx * nby; ++k) {
    const std::uint32_t n = r.u32();
    const std::size_t block_at = r.offset();
    try {
      blocks.push_back(deserialize_block(r.bytes(n)));
    } catch (const ParseError& e) {
      throw ParseError(block_at + e.offset(), std::string("in block ") + std::to_string(k) + ": " + e.what());
    }
  }
  if (!r.at_end()) throw ParseError(r.offset(), "trailing bytes after last block");
  try {
    f.world = VoxelWorld(std::move(blocks));
  } catch (const InvalidArgument& e) {
    throw ParseError(manifest_at, e.what());
  }
  return f;
}

}  // namespace infinicity
