#pragma once

// Depth-6 sparse voxel octree block (64 voxels per edge) and its canonical
// depth-first .ioct encoding.
//
// Only occupied voxels are stored; an internal node exists only while some
// voxel below it is occupied, so the tree shape is a function of the voxel
// set. Child index within a node is bit_x | bit_y << 1 | bit_z << 2.

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "infinicity/core.hpp"
#include "infinicity/satmap.hpp"

namespace infinicity {

struct Voxel {
  ClassId class_id = 0;
  PackedNormal normal = pack_normal(kUp);

  Vec3 normal_vec() const { return unpack_normal(normal); }
  friend bool operator==(const Voxel&, const Voxel&) = default;
};

struct BlockCoord {
  std::int32_t bx = 0, by = 0;
  friend bool operator==(const BlockCoord&, const BlockCoord&) = default;
  friend auto operator<=>(const BlockCoord&, const BlockCoord&) = default;
};

struct VoxelCoord {
  int x = 0, y = 0, z = 0;
  friend bool operator==(const VoxelCoord&, const VoxelCoord&) = default;
  friend auto operator<=>(const VoxelCoord&, const VoxelCoord&) = default;
};

class OctreeBlock {
 public:
  static constexpr int kDepth = 6;
  static constexpr int kEdge = 1 << kDepth;

  OctreeBlock() = default;
  explicit OctreeBlock(BlockCoord coord) : coord_(coord) {}

  BlockCoord coord() const { return coord_; }
  void set_coord(BlockCoord c) { coord_ = c; }

  static bool in_bounds(int x, int y, int z) {
    return x >= 0 && x < kEdge && y >= 0 && y < kEdge && z >= 0 && z < kEdge;
  }

  bool empty() const { return root_ < 0; }
  std::size_t occupied_count() const { return count_; }

  std::optional<Voxel> get(int x, int y, int z) const {
    if (!in_bounds(x, y, z) || root_ < 0) return std::nullopt;
    std::int32_t node = root_;
    for (int level = 0; level < kDepth; ++level) {
      const std::int32_t child = nodes_[static_cast<std::size_t>(node)].child[child_index(x, y, z, level)];
      if (child < 0) return std::nullopt;
      if (level == kDepth - 1) return leaves_[static_cast<std::size_t>(child)];
      node = child;
    }
    return std::nullopt;
  }

  bool occupied(int x, int y, int z) const { return get(x, y, z).has_value(); }

  void set(int x, int y, int z, const Voxel& v) {
    if (!in_bounds(x, y, z)) throw OutOfRange("voxel outside block");
    if (root_ < 0) root_ = new_node();
    std::int32_t node = root_;
    for (int level = 0; level < kDepth; ++level) {
      const int ci = child_index(x, y, z, level);
      std::int32_t child = nodes_[static_cast<std::size_t>(node)].child[ci];
      if (level == kDepth - 1) {
        if (child < 0) {
          child = static_cast<std::int32_t>(leaves_.size());
          leaves_.push_back(v);
          nodes_[static_cast<std::size_t>(node)].child[ci] = child;
          ++count_;
        } else {
          leaves_[static_cast<std::size_t>(child)] = v;
        }
        return;
      }
      if (child < 0) {
        child = new_node();
        nodes_[static_cast<std::size_t>(node)].child[ci] = child;
      }
      node = child;
    }
  }

  /// Removes a voxel and prunes any internal node left without children.
  void clear(int x, int y, int z) {
    if (!in_bounds(x, y, z) || root_ < 0) return;
    std::array<std::int32_t, kDepth> path{};
    std::int32_t node = root_;
    for (int level = 0; level < kDepth; ++level) {
      path[static_cast<std::size_t>(level)] = node;
      const std::int32_t child = nodes_[static_cast<std::size_t>(node)].child[child_index(x, y, z, level)];
      if (child < 0) return;
      if (level < kDepth - 1) node = child;
    }
    --count_;
    for (int level = kDepth - 1; level >= 0; --level) {
      auto& n = nodes_[static_cast<std::size_t>(path[static_cast<std::size_t>(level)])];
      n.child[child_index(x, y, z, level)] = -1;
      if (!n.is_empty()) return;
    }
    root_ = -1;
  }

  /// Edge length of the largest empty aligned node containing the voxel:
  /// 0 if the voxel is occupied, 64 for an empty block.
  int empty_extent(int x, int y, int z) const {
    if (root_ < 0) return kEdge;
    std::int32_t node = root_;
    for (int level = 0; level < kDepth; ++level) {
      const std::int32_t child = nodes_[static_cast<std::size_t>(node)].child[child_index(x, y, z, level)];
      if (child < 0) return kEdge >> (level + 1);
      node = child;
    }
    return 0;
  }

  /// Visits occupied voxels in depth-first child order.
  template <typename F>
  void for_each(F&& f) const {
    if (root_ >= 0) visit(root_, 0, 0, 0, 0, f);
  }

  std::vector<std::pair<VoxelCoord, Voxel>> voxels() const {
    std::vector<std::pair<VoxelCoord, Voxel>> out;
    out.reserve(count_);
    for_each([&](VoxelCoord c, const Voxel& v) { out.emplace_back(c, v); });
    return out;
  }

  /// Nodes reachable from the root (internal nodes only).
  std::size_t node_count() const {
    std::size_t n = 0;
    if (root_ >= 0) count_nodes(root_, 0, n);
    return n;
  }

  friend bool operator==(const OctreeBlock& a, const OctreeBlock& b) {
    return a.coord_ == b.coord_ && a.count_ == b.count_ && a.voxels() == b.voxels();
  }

 private:
  struct Node {
    std::array<std::int32_t, 8> child{-1, -1, -1, -1, -1, -1, -1, -1};
    bool is_empty() const {
      for (auto c : child)
        if (c >= 0) return false;
      return true;
    }
  };

  static int child_index(int x, int y, int z, int level) {
    const int shift = kDepth - 1 - level;
    return ((x >> shift) & 1) | (((y >> shift) & 1) << 1) | (((z >> shift) & 1) << 2);
  }

  std::int32_t new_node() {
    nodes_.emplace_back();
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }

  template <typename F>
  void visit(std::int32_t node, int level, int x, int y, int z, F& f) const {
    const int half = kEdge >> (level + 1);
    for (int ci = 0; ci < 8; ++ci) {
      const std::int32_t child = nodes_[static_cast<std::size_t>(node)].child[ci];
      if (child < 0) continue;
      const int cx = x + (ci & 1) * half, cy = y + ((ci >> 1) & 1) * half, cz = z + ((ci >> 2) & 1) * half;
      if (level == kDepth - 1)
        f(VoxelCoord{cx, cy, cz}, leaves_[static_cast<std::size_t>(child)]);
      else
        visit(child, level + 1, cx, cy, cz, f);
    }
  }

  void count_nodes(std::int32_t node, int level, std::size_t& n) const {
    ++n;
    if (level == kDepth - 1) return;
    for (auto c : nodes_[static_cast<std::size_t>(node)].child)
      if (c >= 0) count_nodes(c, level + 1, n);
  }

  friend std::vector<std::uint8_t> serialize_block(const OctreeBlock&);

  BlockCoord coord_{};
  std::vector<Node> nodes_;
  std::vector<Voxel> leaves_;
  std::int32_t root_ = -1;
  std::size_t count_ = 0;
};

// ---------------------------------------------------------------------------
// .ioct encoding
//
//   header (16 bytes): "IOCT" | u16 version | u8 depth (6) | u8 reserved (0)
//                      | i32 bx | i32 by
//   body: absent for an empty block; otherwise the root node, where an
//   internal node is a non-zero u8 child mask followed by its present
//   children in index order, and a leaf (depth 6) is u8 flags (bit 0 =
//   occupied, must be set) | u8 class | 3 x i16 normal.

inline constexpr std::uint16_t kIoctVersion = 1;
inline constexpr std::size_t kIoctHeaderSize = 16;

inline std::vector<std::uint8_t> serialize_block(const OctreeBlock& block) {
  ByteWriter w;
  w.tag("IOCT");
  w.u16(kIoctVersion);
  w.u8(OctreeBlock::kDepth);
  w.u8(0);
  w.i32(block.coord_.bx);
  w.i32(block.coord_.by);
  if (block.root_ < 0) return w.take();

  auto emit = [&](auto&& self, std::int32_t node, int level) -> void {
    const auto& n = block.nodes_[static_cast<std::size_t>(node)];
    std::uint8_t mask = 0;
    for (int ci = 0; ci < 8; ++ci)
      if (n.child[ci] >= 0) mask |= static_cast<std::uint8_t>(1u << ci);
    w.u8(mask);
    for (int ci = 0; ci < 8; ++ci) {
      const std::int32_t c = n.child[ci];
      if (c < 0) continue;
      if (level == OctreeBlock::kDepth - 1) {
        const Voxel& v = block.leaves_[static_cast<std::size_t>(c)];
        w.u8(1);
        w.u8(v.class_id);
        for (auto q : v.normal) w.i16(q);
      } else {
        self(self, c, level + 1);
      }
    }
  };
  emit(emit, block.root_, 0);
  return w.take();
}

inline OctreeBlock deserialize_block(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("IOCT");
  std::size_t at = r.offset();
  if (r.u16() != kIoctVersion) throw ParseError(at, "unsupported .ioct version");
  at = r.offset();
  if (r.u8() != OctreeBlock::kDepth) throw ParseError(at, "wrong octree depth (expected 6)");
  at = r.offset();
  if (r.u8() != 0) throw ParseError(at, "reserved header byte must be zero");
  const std::int32_t bx = r.i32(), by = r.i32();
  OctreeBlock block({bx, by});
  if (r.at_end()) return block;

  auto parse = [&](auto&& self, int level, int x, int y, int z) -> void {
    const std::size_t mask_at = r.offset();
    const std::uint8_t mask = r.u8();
    if (mask == 0) throw ParseError(mask_at, "empty internal node (non-canonical tree)");
    const int half = OctreeBlock::kEdge >> (level + 1);
    for (int ci = 0; ci < 8; ++ci) {
      if (!(mask & (1u << ci))) continue;
      const int cx = x + (ci & 1) * half, cy = y + ((ci >> 1) & 1) * half, cz = z + ((ci >> 2) & 1) * half;
      if (level == OctreeBlock::kDepth - 1) {
        const std::size_t leaf_at = r.offset();
        const std::uint8_t flags = r.u8();
        if (flags != 1) throw ParseError(leaf_at, "leaf flags must mark an occupied voxel");
        Voxel v;
        v.class_id = r.u8();
        const std::size_t normal_at = r.offset();
        for (auto& q : v.normal) q = r.i16();
        if (v.normal[0] == 0 && v.normal[1] == 0 && v.normal[2] == 0)
          throw ParseError(normal_at, "zero normal");
        block.set(cx, cy, cz, v);
      } else {
        self(self, level + 1, cx, cy, cz);
      }
    }
  };
  parse(parse, 0, 0, 0, 0);
  if (!r.at_end()) throw ParseError(r.offset(), "trailing bytes after tree (child below a leaf?)");
  return block;
}

}  // namespace infinicity
