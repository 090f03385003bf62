#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>

#include "infinicity/synthesis.hpp"
#include "test_support.hpp"

namespace infinicity {
namespace {

ProceduralMapGenerator default_generator() { return ProceduralMapGenerator(GeneratorConfig{64, {64}, 1}); }

bool same_pixels(const CdnTile& a, int ax, int ay, const CdnTile& b, int bx, int by, int w, int h) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (a.category(ax + x, ay + y) != b.category(bx + x, by + y) ||
          a.height_m(ax + x, ay + y) != b.height_m(bx + x, by + y) ||
          a.normal(ax + x, ay + y) != b.normal(bx + x, by + y))
        return false;
  return true;
}

TEST(LatentField, CellMaterializationIsDeterministic) {
  const auto field = sample_field(42);
  const auto a = field.cell({3, -7});
  const std::vector<float> first(a.begin(), a.end());
  const auto b = field.cell({3, -7});
  EXPECT_EQ(first, std::vector<float>(b.begin(), b.end()));
  const auto other = sample_field(42);
  const auto c = other.cell({3, -7});
  EXPECT_EQ(first, std::vector<float>(c.begin(), c.end()));
}

TEST(LatentField, DistinctSeedsGiveDistinctGlobalLatents) {
  std::mt19937_64 rng(7);
  for (int n = 0; n < 100; ++n) {
    const auto s1 = rng(), s2 = rng();
    ASSERT_NE(s1, s2);
    const auto f1 = sample_field(s1), f2 = sample_field(s2);
    EXPECT_FALSE(std::equal(f1.global_latent().begin(), f1.global_latent().end(),
                            f2.global_latent().begin()));
  }
}

TEST(LatentField, FarCellMaterializesAlone) {
  const auto field = sample_field(1);
  EXPECT_EQ(field.materialized_count(), 0u);
  field.cell({1'000'000, -1'000'000});
  EXPECT_EQ(field.materialized_count(), 1u);
  EXPECT_TRUE(field.is_materialized({1'000'000, -1'000'000}));
  EXPECT_FALSE(field.is_materialized({999'999, -1'000'000}));
}

TEST(LatentField, RejectsNonPositiveDimensions) {
  EXPECT_THROW(sample_field(1, 0, 16, 32), InvalidArgument);
  EXPECT_THROW(sample_field(1, 64, -1, 32), InvalidArgument);
  EXPECT_THROW(sample_field(1, 64, 16, 0), InvalidArgument);
}

TEST(LatentField, GeneratorRejectsStrideThatDoesNotDividePatch) {
  const auto gen = default_generator();
  EXPECT_THROW(synthesize_region(sample_field(1, 64, 16, 48), gen, {0, 0, 64, 64}), InvalidArgument);
}

TEST(LatentField, SnapshotRoundTripIsBitExact) {
  auto field = sample_field(99);
  for (int i = -3; i < 3; ++i) field.cell({i, 2 * i});
  field = resample_region(field, {0, 0, 64, 64}, {64}, 5);
  const auto bytes = write_iclf(field);
  const auto loaded = read_iclf(bytes);
  EXPECT_EQ(write_iclf(loaded), bytes);
  EXPECT_EQ(loaded.materialized_count(), field.materialized_count());
  const auto gen = default_generator();
  EXPECT_EQ(synthesize_region(loaded, gen, {-40, 10, 100, 90}), synthesize_region(field, gen, {-40, 10, 100, 90}));
}

TEST(LatentField, SnapshotRejectsTruncatedAndCorrupt) {
  auto field = sample_field(3);
  field.cell({0, 0});
  auto bytes = write_iclf(field);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{20}, bytes.size() - 1}) {
    std::vector<std::uint8_t> trunc(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    EXPECT_THROW(read_iclf(trunc), ParseError) << cut;
  }
  bytes[0] = 'X';
  EXPECT_THROW(read_iclf(bytes), ParseError);
}

// --- synthesis -------------------------------------------------------------

TEST(Synthesis, MonolithicEqualsStitchedQuarters) {
  const auto gen = default_generator();
  const auto field = sample_field(11);
  const Rect whole{-37, 91, 128, 128};  // deliberately off the patch grid
  const CdnTile mono = synthesize_region(field, gen, whole);
  for (int qy = 0; qy < 2; ++qy)
    for (int qx = 0; qx < 2; ++qx) {
      const CdnTile q = synthesize_region(field, gen, {whole.x + 64 * qx, whole.y + 64 * qy, 64, 64});
      EXPECT_TRUE(same_pixels(mono, 64 * qx, 64 * qy, q, 0, 0, 64, 64));
    }
}

TEST(Synthesis, OutputIndependentOfBatchSize) {
  const auto gen = default_generator();
  const auto field = sample_field(12);
  const Rect r{5, 5, 200, 150};
  const auto a = synthesize_region(field, gen, r, 1);
  EXPECT_EQ(a, synthesize_region(field, gen, r, 3));
  EXPECT_EQ(a, synthesize_region(field, gen, r, 64));
  ProceduralMapGenerator threaded(GeneratorConfig{64, {64}, 4});
  EXPECT_EQ(a, synthesize_region(field, threaded, r, 8));
}

TEST(Synthesis, GeneratorIsPerPixel) {
  const auto gen = default_generator();
  const auto field = sample_field(13);
  const Rect r{-20, 30, 96, 80};
  const auto block = gen.generate(field, r);
  std::mt19937_64 rng(1);
  for (int n = 0; n < 200; ++n) {
    const int x = static_cast<int>(rng() % 96), y = static_cast<int>(rng() % 80);
    const auto single = gen.generate(field, {r.x + x, r.y + y, 1, 1});
    EXPECT_EQ(single.color(0, 0), block.color(x, y));
    EXPECT_EQ(single.height(0, 0), block.height(x, y));
    EXPECT_EQ(single.normal(0, 0), block.normal(x, y));
  }
}

TEST(Synthesis, LargeRegionHasUnitNormalsAndValidChannels) {
  const auto gen = default_generator();
  const auto tile = synthesize_region(sample_field(2024), gen, {-512, -512, 1024, 1024});
  ASSERT_EQ(tile.width(), 1024);
  tile.validate();
  std::map<ClassId, int> counts;
  for (int y = 0; y < 1024; ++y)
    for (int x = 0; x < 1024; ++x) {
      ASSERT_NEAR(length(tile.normal_at(x, y)), 1.0, 1e-6);
      ASSERT_LT(tile.height_m(x, y), kWorldHeight);
      ++counts[tile.category(x, y)];
    }
  // A city needs all of these.
  for (ClassId c : {cls::kRoad, cls::kBuilding, cls::kTree}) EXPECT_GT(counts[c], 1000) << int(c);
}

TEST(Synthesis, RejectsEmptyRect) {
  EXPECT_THROW(synthesize_region(sample_field(1), default_generator(), {0, 0, 0, 5}), InvalidArgument);
}

// --- calibration -----------------------------------------------------------

TEST(Calibration, SinglePixelAtCellCentreZeroRadius) {
  const auto cells = calibrate_region({48, 80, 1, 1}, {0}, 32);  // centre of cell (1, 2)
  EXPECT_EQ(cells, (std::set<CellCoord>{{1, 2}}));
}

TEST(Calibration, MatchesEnumeratedFootprintPredicate) {
  const Rect rect{-100, 37, 256, 256};
  EXPECT_EQ(calibrate_region(rect, {64}, 32), testing::enumerate_footprint_cells(rect, 64, 32, 40));
  std::mt19937_64 rng(5);
  for (int n = 0; n < 50; ++n) {
    const Rect r = testing::random_rect(rng, -300, 300, 1, 120);
    const auto radius = static_cast<std::int64_t>(rng() % 90);
    EXPECT_EQ(calibrate_region(r, {radius}, 32), testing::enumerate_footprint_cells(r, radius, 32, 20));
  }
}

TEST(Calibration, RejectsEmptyRect) { EXPECT_THROW(calibrate_region({0, 0, 5, 0}, {8}, 32), InvalidArgument); }

TEST(Calibration, SupersetOfBruteForceInfluence) {
  // 8x8-cell field, radius 32: small enough for a unit test.
  ProceduralMapGenerator gen(GeneratorConfig{64, {32}, 1});
  const auto field = sample_field(77);
  std::vector<CellCoord> universe;
  for (int j = 0; j < 8; ++j)
    for (int i = 0; i < 8; ++i) universe.push_back({i, j});
  const testing::InfluenceOracle oracle(field, gen, {0, 0, 256, 256}, universe);
  EXPECT_GT(oracle.cells_with_effect(), 32u);
  EXPECT_LE(oracle.max_reach(32), 32.0);
  std::mt19937_64 rng(9);
  for (int n = 0; n < 20; ++n) {
    const Rect r = testing::random_rect(rng, 0, 256, 1, 100);
    const auto calibrated = calibrate_region(r, gen.receptive_field(), 32);
    for (const auto& c : oracle.influencing(r)) EXPECT_TRUE(calibrated.count(c)) << c.i << "," << c.j;
  }
}

// --- resampling --------------------------------------------------------------

TEST(Resample, FarRegionUnchanged) {
  const auto gen = default_generator();
  const auto field = sample_field(21);
  const Rect rect{0, 0, 128, 128};
  const auto after = resample_region(field, rect, gen.receptive_field(), 1234);
  const Rect far{rect.right() + 3 * 64, 0, 96, 96};
  EXPECT_EQ(synthesize_region(field, gen, far), synthesize_region(after, gen, far));
}

TEST(Resample, DifferentSeedsDifferInside) {
  const auto gen = default_generator();
  const auto field = sample_field(22);
  const Rect rect{64, 64, 128, 128};
  const auto a = synthesize_region(resample_region(field, rect, gen.receptive_field(), 1), gen, rect);
  const auto b = synthesize_region(resample_region(field, rect, gen.receptive_field(), 2), gen, rect);
  EXPECT_NE(a, b);
}

TEST(Resample, ChangesConfinedToRadiusAroundBox) {
  const auto gen = default_generator();
  const auto field = sample_field(23);
  const Rect rect{100, -60, 160, 96};
  const auto after = resample_region(field, rect, gen.receptive_field(), 77);
  const Rect view = rect.dilated(3 * 64);
  const auto before_tile = synthesize_region(field, gen, view);
  const auto after_tile = synthesize_region(after, gen, view);
  int changed_inside = 0, changed_near = 0;
  for (int y = 0; y < view.h; ++y)
    for (int x = 0; x < view.w; ++x) {
      const bool diff = before_tile.category(x, y) != after_tile.category(x, y) ||
                        before_tile.height_m(x, y) != after_tile.height_m(x, y) ||
                        before_tile.normal(x, y) != after_tile.normal(x, y);
      if (!diff) continue;
      const double d2 = distance_sq_to_rect(double(view.x + x), double(view.y + y), rect);
      ASSERT_LE(d2, 64.0 * 64.0) << "pixel changed beyond the receptive radius";
      if (d2 == 0.0) ++changed_inside; else ++changed_near;
    }
  EXPECT_GT(changed_inside, 0);
  EXPECT_GT(changed_near, 0);  // edge latents leak just outside the box
}

TEST(Resample, OnlyCellsInsideRectAreRedrawn) {
  const auto field = sample_field(24);
  const Rect rect{0, 0, 64, 64};
  const auto after = resample_region(field, rect, {64}, 3);
  for (const auto& c : calibrate_region(rect, {64}, 32)) {
    const auto a = field.cell(c), b = after.cell(c);
    const bool inside = c.i >= 0 && c.i < 2 && c.j >= 0 && c.j < 2;
    EXPECT_EQ(std::equal(a.begin(), a.end(), b.begin()), !inside) << c.i << "," << c.j;
  }
}

TEST(Resample, SubCellRectRedrawsOnlyItsOwnNoise) {
  const auto gen = default_generator();
  const auto field = sample_field(25);
  const Rect rect{50, 50, 12, 60};  // holds no cell centre
  ASSERT_TRUE(calibrate_region(rect, {0}, 32).empty());
  const auto after = resample_region(field, rect, gen.receptive_field(), 9);
  EXPECT_EQ(after.materialized_count(), field.materialized_count());
  ASSERT_EQ(after.noise_overrides().size(), 1u);
  const Rect view = rect.dilated(16);
  const auto a = gen.generate(field, view), b = gen.generate(after, view);
  int changed = 0;
  for (int y = 0; y < view.h; ++y)
    for (int x = 0; x < view.w; ++x) {
      if (a.color(x, y) == b.color(x, y) && a.height(x, y) == b.height(x, y)) continue;
      ++changed;
      EXPECT_TRUE(rect.contains(view.x + x, view.y + y)) << x << "," << y;
    }
  EXPECT_GT(changed, 0);
  const auto loaded = read_iclf(write_iclf(after));
  EXPECT_EQ(loaded.noise_overrides(), after.noise_overrides());
}

TEST(LatentField, ReadsSnapshotsWithoutNoiseSection) {
  auto field = sample_field(26);
  field.cell({1, 1});
  auto bytes = write_iclf(field);
  bytes[4] = 1;  // version 1 ends after the cells
  bytes.resize(bytes.size() - 8);
  const auto loaded = read_iclf(bytes);
  EXPECT_EQ(loaded.materialized_count(), 1u);
  EXPECT_TRUE(loaded.noise_overrides().empty());
}

// --- queue -------------------------------------------------------------------

TEST(Queue, BatchSizeInvariance) {
  const auto gen = default_generator();
  const auto field = sample_field(31);
  auto run = [&](std::size_t batch) {
    SynthesisQueue q(64);
    for (int k = 0; k < 17; ++k) q.submit({64 * (k % 5) - 128, 64 * (k / 5), 64, 64});
    auto res = q.flush(batch, [&](std::span<const Rect> r) { return gen.generate_batch(field, r); });
    return std::make_pair(std::move(res), q.completion_order());
  };
  const auto [r1, o1] = run(1);
  const auto [r8, o8] = run(8);
  ASSERT_EQ(r1.size(), 17u);
  EXPECT_EQ(o1, o8);
  for (std::size_t k = 0; k < 17; ++k) {
    EXPECT_EQ(r1[k].job_id, k);
    EXPECT_EQ(r1[k].job_id, r8[k].job_id);
    EXPECT_EQ(r1[k].output, r8[k].output);
  }
}

TEST(Queue, EmptyFlushDoesNotInvokeGenerator) {
  SynthesisQueue q(64);
  int calls = 0;
  auto res = q.flush(4, [&](std::span<const Rect> r) {
    ++calls;
    return std::vector<int>(r.size());
  });
  EXPECT_TRUE(res.empty());
  EXPECT_EQ(calls, 0);
}

TEST(Queue, BatchesAreStackedInOrder) {
  SynthesisQueue q(64);
  for (int k = 0; k < 10; ++k) q.submit({64 * k, 0, 64, 64});
  std::vector<std::size_t> sizes;
  auto res = q.flush(4, [&](std::span<const Rect> r) {
    sizes.push_back(r.size());
    std::vector<std::int64_t> xs;
    for (const auto& rr : r) xs.push_back(rr.x);
    return xs;
  });
  EXPECT_EQ(sizes, (std::vector<std::size_t>{4, 4, 2}));
  for (std::size_t k = 0; k < res.size(); ++k) EXPECT_EQ(res[k].output, std::int64_t(64 * k));
  EXPECT_EQ(q.pending(), 0u);
}

TEST(Queue, RejectsBadJobsAndBatchSize) {
  SynthesisQueue q(64);
  EXPECT_THROW(q.submit({0, 0, 32, 64}), InvalidArgument);
  EXPECT_THROW(q.flush(0, [](std::span<const Rect> r) { return std::vector<int>(r.size()); }),
               InvalidArgument);
}

TEST(Queue, LocalResampleNeedsFewJobs) {
  const Rect map{0, 0, 4096, 4096};
  const Rect region{1920, 1920, 256, 256};
  const std::size_t full = patches_covering(map, 64).size();
  const std::size_t local = patches_covering(affected_footprint(region, {64}), 64).size();
  EXPECT_EQ(full, 4096u);
  EXPECT_LT(local, full / 20);
}

}  // namespace
}  // namespace infinicity
