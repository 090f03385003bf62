#include <gtest/gtest.h>

#include <map>
#include <random>

#include "infinicity/octree.hpp"

using namespace infinicity;

namespace {

OctreeBlock random_block(std::mt19937_64& rng) {
  OctreeBlock b({static_cast<std::int32_t>(rng() % 200) - 100, static_cast<std::int32_t>(rng() % 200) - 100});
  const int n = static_cast<int>(rng() % 300);
  for (int k = 0; k < n; ++k) {
    Voxel v;
    v.class_id = static_cast<ClassId>(rng() % 12);
    v.normal = pack_normal({to_signed_unit(rng()), to_signed_unit(rng()), 0.1 + to_unit(rng())});
    b.set(static_cast<int>(rng() % 64), static_cast<int>(rng() % 64), static_cast<int>(rng() % 64), v);
  }
  return b;
}

}  // namespace

TEST(Octree, SetGetClearAgainstDenseMap) {
  std::mt19937_64 rng(1);
  OctreeBlock b;
  std::map<VoxelCoord, Voxel> ref;
  for (int k = 0; k < 5000; ++k) {
    const VoxelCoord c{int(rng() % 16), int(rng() % 16), int(rng() % 16)};
    if (rng() % 3 == 0) {
      b.clear(c.x, c.y, c.z);
      ref.erase(c);
    } else {
      const Voxel v{static_cast<ClassId>(rng() % 12), pack_normal(kUp)};
      b.set(c.x, c.y, c.z, v);
      ref[c] = v;
    }
  }
  EXPECT_EQ(b.occupied_count(), ref.size());
  for (int z = 0; z < 16; ++z)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        auto it = ref.find({x, y, z});
        const auto got = b.get(x, y, z);
        ASSERT_EQ(got.has_value(), it != ref.end());
        if (got) {
          EXPECT_EQ(*got, it->second);
        }
      }
}

TEST(Octree, ClearingEverythingLeavesEmptyCanonicalBlock) {
  OctreeBlock b;
  b.set(3, 4, 5, Voxel{});
  b.set(60, 1, 33, Voxel{});
  b.clear(3, 4, 5);
  b.clear(60, 1, 33);
  EXPECT_TRUE(b.empty());
  EXPECT_EQ(b.node_count(), 0u);
  EXPECT_EQ(serialize_block(b).size(), kIoctHeaderSize);
}

TEST(Octree, SingleVoxelHasOneNodePerLevel) {
  OctreeBlock b;
  b.set(63, 0, 17, Voxel{});
  EXPECT_EQ(b.node_count(), 6u);
}

TEST(Octree, EmptyExtentDescribesLargestEmptyNode) {
  OctreeBlock b;
  EXPECT_EQ(b.empty_extent(5, 5, 5), 64);
  b.set(0, 0, 0, Voxel{});
  EXPECT_EQ(b.empty_extent(0, 0, 0), 0);
  EXPECT_EQ(b.empty_extent(40, 40, 40), 32);
  EXPECT_EQ(b.empty_extent(1, 0, 0), 1);
  EXPECT_EQ(b.empty_extent(2, 0, 0), 2);
}

TEST(Octree, OutOfBoundsSetThrows) {
  OctreeBlock b;
  EXPECT_THROW(b.set(64, 0, 0, Voxel{}), OutOfRange);
  EXPECT_THROW(b.set(0, -1, 0, Voxel{}), OutOfRange);
  EXPECT_FALSE(b.get(64, 0, 0).has_value());
}

TEST(Ioct, EmptyBlockIsHeaderOnly) {
  const auto bytes = serialize_block(OctreeBlock({7, -3}));
  ASSERT_EQ(bytes.size(), 16u);
  const OctreeBlock back = deserialize_block(bytes);
  EXPECT_TRUE(back.empty());
  EXPECT_EQ(back.coord(), (BlockCoord{7, -3}));
}

TEST(Ioct, RandomBlocksRoundTripBitExact) {
  std::mt19937_64 rng(42);
  for (int k = 0; k < 200; ++k) {
    const OctreeBlock b = random_block(rng);
    const auto bytes = serialize_block(b);
    const OctreeBlock back = deserialize_block(bytes);
    ASSERT_EQ(back, b);
    ASSERT_EQ(serialize_block(back), bytes);
  }
}

TEST(Ioct, EncodingIndependentOfInsertionOrder) {
  std::mt19937_64 rng(8);
  std::vector<std::pair<VoxelCoord, Voxel>> vox;
  for (int k = 0; k < 100; ++k)
    vox.push_back({{int(rng() % 64), int(rng() % 64), int(rng() % 64)}, Voxel{static_cast<ClassId>(k % 12), pack_normal(kUp)}});
  std::sort(vox.begin(), vox.end(), [](auto& a, auto& b) { return a.first < b.first; });
  vox.erase(std::unique(vox.begin(), vox.end(), [](auto& a, auto& b) { return a.first == b.first; }), vox.end());
  OctreeBlock a, b;
  for (auto& [c, v] : vox) a.set(c.x, c.y, c.z, v);
  std::shuffle(vox.begin(), vox.end(), rng);
  for (auto& [c, v] : vox) b.set(c.x, c.y, c.z, v);
  EXPECT_EQ(serialize_block(a), serialize_block(b));
}

TEST(Ioct, MalformedStreamsReportOffsets) {
  OctreeBlock b;
  b.set(1, 2, 3, Voxel{cls::kRoad, pack_normal(kUp)});
  const auto bytes = serialize_block(b);

  for (std::size_t n = 0; n < bytes.size(); ++n) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n));
    if (n == kIoctHeaderSize) continue;  // a bare header is a valid empty block
    EXPECT_THROW(deserialize_block(cut), ParseError) << "length " << n;
  }

  auto wrong_depth = bytes;
  wrong_depth[6] = 5;
  try {
    deserialize_block(wrong_depth);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 6u);
  }

  auto below_leaf = bytes;
  below_leaf.push_back(0x01);
  EXPECT_THROW(deserialize_block(below_leaf), ParseError);

  auto zero_mask = bytes;
  zero_mask[kIoctHeaderSize] = 0;
  try {
    deserialize_block(zero_mask);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), kIoctHeaderSize);
  }

  auto bad_flag = bytes;
  bad_flag[kIoctHeaderSize + 6] = 0;  // six mask bytes, then the leaf flags
  EXPECT_THROW(deserialize_block(bad_flag), ParseError);
}
