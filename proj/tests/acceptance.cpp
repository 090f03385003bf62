// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "infinicity/camsample.hpp"
#include "infinicity/ingest.hpp"
#include "infinicity/octree.hpp"
#include "infinicity/pipeline.hpp"
#include "infinicity/synthesis.hpp"
#include "test_support.hpp"

using namespace infinicity;
namespace it = infinicity::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool pixel_equal(const CdnTile& a, int ax, int ay, const CdnTile& b, int bx, int by) {
  return a.category(ax, ay) == b.category(bx, by) && a.height_m(ax, ay) == b.height_m(bx, by) &&
         a.normal(ax, ay) == b.normal(bx, by);
}

ProceduralMapGenerator default_generator() { return ProceduralMapGenerator(GeneratorConfig{64, {64}, 1}); }

// Synthesized, cleaned city map lifted to a voxel world.
struct City {
  CdnTile tile;
  VoxelWorld world;
};

City city(std::uint64_t seed, int side, Completion mode) {
  CdnTile t = synthesize_region(sample_field(seed), default_generator(), {0, 0, side, side});
  clean_tile(t);
  VoxelWorld w = build_world(t, mode);
  return {std::move(t), std::move(w)};
}

Vec3 random_direction(std::mt19937_64& rng) {
  for (;;) {
    const Vec3 v{to_signed_unit(rng()), to_signed_unit(rng()), to_signed_unit(rng())};
    const double n = length(v);
    if (n > 1e-3 && n <= 1.0) return v / n;
  }
}

Outcome spatial_independence() {
  const auto t0 = Clock::now();
  const auto gen = default_generator();
  std::mt19937_64 rng(1001);
  int identical = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto field = sample_field(rng());
    const Rect whole{static_cast<std::int64_t>(rng() % 4096) - 2048, static_cast<std::int64_t>(rng() % 4096) - 2048, 256, 256};
    const CdnTile mono = synthesize_region(field, gen, whole);
    bool same = true;
    for (int py = 0; py < 4 && same; ++py)
      for (int px = 0; px < 4 && same; ++px) {
        const CdnTile patch = synthesize_region(field, gen, {whole.x + 64 * px, whole.y + 64 * py, 64, 64});
        for (int y = 0; y < 64 && same; ++y)
          for (int x = 0; x < 64 && same; ++x) same = pixel_equal(mono, 64 * px + x, 64 * py + y, patch, x, y);
      }
    identical += same;
  }
  const double secs = seconds_since(t0);
  return {identical == 50 && secs < 60.0, fmt("%d/50 seeds bit-identical, %.1f s", identical, secs)};
}

Outcome resampling_locality() {
  const auto gen = default_generator();
  const std::int64_t radius = gen.receptive_field().radius_px;
  std::mt19937_64 rng(2002);
  int clean_outside = 0, changed_inside = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto field = sample_field(rng());
    const Rect rect = it::random_rect(rng, -400, 400, 8, 128);
    const auto after = resample_region(field, rect, gen.receptive_field(), rng());
    const Rect view = rect.dilated(radius + 48);
    const CdnTile a = synthesize_region(field, gen, view), b = synthesize_region(after, gen, view);
    bool outside_ok = true, inside_changed = false;
    for (int y = 0; y < view.h; ++y)
      for (int x = 0; x < view.w; ++x) {
        if (pixel_equal(a, x, y, b, x, y)) continue;
        const double d2 = distance_sq_to_rect(double(view.x + x), double(view.y + y), rect);
        if (d2 > double(radius) * double(radius)) outside_ok = false;
        if (d2 == 0.0) inside_changed = true;
      }
    clean_outside += outside_ok;
    changed_inside += inside_changed;
  }
  return {clean_outside == 50 && changed_inside >= 48,
          fmt("outside radius identical in %d/50, inside changed in %d/50", clean_outside, changed_inside)};
}

Outcome calibration_oracle() {
  constexpr int kStride = 32;
  const ProceduralMapGenerator gen(GeneratorConfig{64, {32}, 1});
  const auto field = sample_field(3003, 64, 16, kStride);
  std::vector<CellCoord> universe;
  for (int j = 0; j < 16; ++j)
    for (int i = 0; i < 16; ++i) universe.push_back({i, j});
  const it::InfluenceOracle oracle(field, gen, {0, 0, 16 * kStride, 16 * kStride}, universe);
  std::mt19937_64 rng(3004);
  int superset = 0, no_empty = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Rect r = it::random_rect(rng, 0, 16 * kStride, 1, 160);
    const auto calibrated = calibrate_region(r, gen.receptive_field(), kStride);
    const auto influence = oracle.influencing(r);
    superset += std::all_of(influence.begin(), influence.end(), [&](const CellCoord& c) { return calibrated.count(c) > 0; });
    const auto footprint = it::enumerate_footprint_cells(r, gen.receptive_field().radius_px, kStride, 24);
    no_empty += std::all_of(calibrated.begin(), calibrated.end(), [&](const CellCoord& c) { return footprint.count(c) > 0; });
  }
  return {superset == 100 && no_empty == 100 && oracle.cells_with_effect() > 0,
          fmt("influence subset in %d/100, no empty-footprint cell in %d/100, %zu cells with effect", superset,
              no_empty, oracle.cells_with_effect())};
}

Outcome queue_invariance() {
  const auto gen = default_generator();
  const auto field = sample_field(4004);
  auto run = [&](std::size_t batch) {
    SynthesisQueue q(64);
    for (int k = 0; k < 17; ++k) q.submit({64 * (k % 5) - 128, 64 * (k / 5) + 7 * 64, 64, 64});
    auto res = q.flush(batch, [&](std::span<const Rect> r) { return gen.generate_batch(field, r); });
    return std::make_pair(std::move(res), q.completion_order());
  };
  const auto [ref, ref_order] = run(1);
  bool fifo = ref.size() == 17;
  for (std::size_t k = 0; k < ref_order.size(); ++k) fifo = fifo && ref_order[k] == k;
  int matching = 0;
  for (std::size_t batch : {1u, 4u, 8u, 32u}) {
    const auto [res, order] = run(batch);
    bool same = res.size() == ref.size() && order == ref_order;
    for (std::size_t k = 0; same && k < res.size(); ++k)
      same = res[k].job_id == ref[k].job_id && res[k].output == ref[k].output;
    matching += same;
  }
  const std::size_t full = patches_covering({0, 0, 4096, 4096}, 64).size();
  const std::size_t local = patches_covering(affected_footprint({1920, 1920, 256, 256}, gen.receptive_field()), 64).size();
  const double share = 100.0 * double(local) / double(full);
  return {fifo && matching == 4 && share < 5.0,
          fmt("%d/4 batch sizes identical, FIFO %s, local resample %zu/%zu jobs (%.2f%%)", matching,
              fifo ? "yes" : "no", local, full, share)};
}

OctreeBlock random_block(std::mt19937_64& rng) {
  OctreeBlock b({static_cast<std::int32_t>(rng() % 200) - 100, static_cast<std::int32_t>(rng() % 200) - 100});
  const int n = static_cast<int>(rng() % 400);
  for (int k = 0; k < n; ++k)
    b.set(static_cast<int>(rng() % 64), static_cast<int>(rng() % 64), static_cast<int>(rng() % 64),
          Voxel{static_cast<ClassId>(rng() % 12),
                pack_normal({to_signed_unit(rng()), to_signed_unit(rng()), 0.1 + to_unit(rng())})});
  return b;
}

Outcome round_trips() {
  std::mt19937_64 rng(5005);
  int tiles = 0, blocks = 0;
  for (int k = 0; k < 1000; ++k) {
    const CdnTile t = it::random_tile(rng);
    tiles += topdown_scan(lift_tile(t)) == t;
  }
  for (int k = 0; k < 1000; ++k) {
    const OctreeBlock b = random_block(rng);
    const auto bytes = serialize_block(b);
    const OctreeBlock back = deserialize_block(bytes);
    blocks += back == b && serialize_block(back) == bytes;
  }
  const Palette p = Palette::default_palette();
  Grid2<ClassId> ids(256, 256);
  for (auto& v : ids.data()) v = static_cast<ClassId>(rng() % p.size());
  const bool palette_ok = decode_category(encode_category(ids, p), p) == ids;
  return {tiles == 1000 && blocks == 1000 && palette_ok,
          fmt("tiles %d/1000, blocks %d/1000, palette %s", tiles, blocks, palette_ok ? "identity" : "mismatch")};
}

// Every occupied column of the world is a solid run starting at z = 0.
bool columns_contiguous(const VoxelWorld& w) {
  for (std::int64_t y = w.min_y(); y < w.max_y(); ++y)
    for (std::int64_t x = w.min_x(); x < w.max_x(); ++x) {
      bool gap = false;
      for (std::int64_t z = 0; z < 64; ++z) {
        if (!w.occupied(x, y, z)) gap = true;
        else if (gap) return false;
      }
    }
  return true;
}

Outcome completion() {
  std::mt19937_64 rng(6006);
  int contiguous = 0, watertight = 0, preserved = 0;
  for (int k = 0; k < 100; ++k) {
    const CdnTile t = it::random_tile(rng, 64, 40, true);
    const OctreeBlock surface = lift_tile(t);
    const OctreeBlock pillar = complete(surface, Completion::kPillar);
    const OctreeBlock tight = complete(surface, Completion::kWatertight);
    contiguous += columns_contiguous(assemble_world({pillar}));
    watertight += it::watertight_violations(assemble_world({tight})) == 0;
    bool keep = true;
    surface.for_each([&](VoxelCoord v, const Voxel& sv) {
      keep = keep && pillar.get(v.x, v.y, v.z) == sv && tight.get(v.x, v.y, v.z) == sv;
    });
    preserved += keep;
  }
  return {contiguous == 100 && watertight == 100 && preserved == 100,
          fmt("pillar contiguity %.2f, watertight %d/100, surface kept %d/100", contiguous / 100.0, watertight,
              preserved)};
}

Outcome traversal_oracle() {
  const City c = city(5, 128, Completion::kWatertight);
  const it::DenseOccupancy occ(c.world);
  std::mt19937_64 rng(7007);
  int agree = 0, grazing = 0, bad = 0, hits = 0;
  for (int k = 0; k < 100000; ++k) {
    const int cx = static_cast<int>(rng() % 128), cy = static_cast<int>(rng() % 128);
    const Vec3 o{cx + to_unit(rng()), cy + to_unit(rng()), c.tile.height_m(cx, cy) + 1 + to_unit(rng()) * 4};
    const Vec3 d = random_direction(rng);
    const double t_max = 1 + to_unit(rng()) * 6;
    const HitRecord h = traverse(c.world, Ray(o, d), t_max);
    const auto m = it::march_first_hit(occ, o, d, t_max);
    if (h.hit == m.has_value() && (!h.hit || h.voxel == *m)) {
      ++agree;
      hits += h.hit;
      continue;
    }
    double edge = std::numeric_limits<double>::infinity();
    if (h.hit) edge = std::min(edge, it::entry_edge_distance(*it::voxel_entry(o, d, h.voxel), h.voxel));
    if (m) edge = std::min(edge, it::entry_edge_distance(*it::voxel_entry(o, d, *m), *m));
    (edge < 1e-5 ? grazing : bad) += 1;
  }

  double worst = 0.0;
  for (int k = 0; k < 10000; ++k) {
    double s = 0.0;
    for (double v : trilinear_weights({to_unit(rng()), to_unit(rng()), to_unit(rng())})) s += v;
    worst = std::max(worst, std::abs(s - 1.0));
  }

  bool identities = true;
  for (int k = 0; k < 8; ++k) {
    const auto w = trilinear_weights({double(k & 1), double((k >> 1) & 1), double((k >> 2) & 1)});
    for (int i = 0; i < 8; ++i) identities = identities && w[static_cast<std::size_t>(i)] == (i == k ? 1.0 : 0.0);
  }
  for (double v : trilinear_weights({0.5, 0.5, 0.5})) identities = identities && v == 0.125;
  std::array<std::int64_t, 3> v{};
  for (int tries = 0; tries < 1000; ++tries) {
    v = {static_cast<std::int64_t>(rng() % 128), static_cast<std::int64_t>(rng() % 128), 0};
    if (c.world.occupied(v[0], v[1], v[2])) break;
  }
  for (int k = 0; k < 8; ++k) {
    const std::int64_t x = v[0] + (k & 1), y = v[1] + ((k >> 1) & 1), z = v[2] + ((k >> 2) & 1);
    identities = identities && trilinear_features(c.world, v, Vec3{double(x), double(y), double(z)}) ==
                                   c.world.corner_feature(x, y, z);
  }
  return {bad == 0 && hits > 0 && worst <= 1e-12 && identities,
          fmt("%d/100000 rays agree (%d hits), %d grazing, %d non-grazing disagreements; weight error %.1e; "
              "identities %s",
              agree, hits, grazing, bad, worst, identities ? "exact" : "broken")};
}

Outcome camera_validity() {
  const City c = city(8008, 128, Completion::kWatertight);
  const WalkableMask mask = refine_mask(label_walkable(c.tile, Palette::default_palette()));
  const auto poses = sample_cameras(mask, c.world, 10000, 8009);
  const it::DenseOccupancy occ(c.world);
  int on_mask = 0, free = 0, pitch_ok = 0;
  std::vector<double> pitch;
  for (const auto& p : poses) {
    const auto px = static_cast<int>(std::floor(p.position.x)) - static_cast<int>(mask.origin_x);
    const auto py = static_cast<int>(std::floor(p.position.y)) - static_cast<int>(mask.origin_y);
    on_mask += px >= 0 && py >= 0 && px < mask.width() && py < mask.height() && mask.at(px, py);
    free += !occ.at(p.position) && !occ.at(p.position + Vec3{0, 0, 1});
    pitch_ok += p.pitch >= 0.0 && p.pitch <= 45.0;
    pitch.push_back(p.pitch);
  }
  const double ks = it::ks_uniform_statistic(pitch, 0.0, 45.0), crit = it::ks_critical_01(pitch.size());
  const int n = static_cast<int>(poses.size());
  return {n == 10000 && on_mask == n && free == n && pitch_ok == n && ks < crit,
          fmt("%d poses, on mask %d, collision-free %d, pitch in range %d, KS D=%.4f (critical %.4f), mask %zu px", n,
              on_mask, free, pitch_ok, ks, crit, mask.count())};
}

Outcome mask_morphology() {
  Grid2<std::uint8_t> corridor(80, 40, 0);
  for (int y = 15; y < 21; ++y)
    for (int x = 0; x < 80; ++x) corridor(x, y) = 1;
  const bool corridor_gone = refine_mask(WalkableMask{corridor, 0, 0, {}}, 0).count() == 0;

  Grid2<std::uint8_t> square(120, 120, 0);
  for (int y = 10; y < 110; ++y)
    for (int x = 10; x < 110; ++x) square(x, y) = 1;
  const WalkableMask shrunk = refine_mask(WalkableMask{square, 0, 0, {}});
  bool exact = shrunk.count() == 94u * 94u;
  for (int y = 0; y < 120; ++y)
    for (int x = 0; x < 120; ++x) exact = exact && shrunk.at(x, y) == (x >= 13 && x < 107 && y >= 13 && y < 107);

  std::mt19937_64 rng(9009);
  int subset = 0;
  for (int k = 0; k < 50; ++k) {
    Grid2<std::uint8_t> g(96, 96, 0);
    for (int b = 0; b < 12; ++b) {
      const Rect r = it::random_rect(rng, 0, 96, 3, 40);
      for (std::int64_t y = r.y; y < r.bottom(); ++y)
        for (std::int64_t x = r.x; x < r.right(); ++x) g(static_cast<int>(x), static_cast<int>(y)) = 1;
    }
    const WalkableMask out = refine_mask(WalkableMask{g, 0, 0, {}}, rng() % 300);
    bool ok = true;
    for (int y = 0; y < 96; ++y)
      for (int x = 0; x < 96; ++x) ok = ok && (!out.at(x, y) || g(x, y));
    subset += ok;
  }
  return {corridor_gone && exact && subset == 50,
          fmt("corridor %s, square %zu px (%s), subset %d/50", corridor_gone ? "erased" : "survives", shrunk.count(),
              exact ? "94x94 at offset 3" : "wrong shape", subset)};
}

Outcome cross_view_consistency() {
  const City c = city(1010, 128, Completion::kWatertight);
  const WalkableMask mask = refine_mask(label_walkable(c.tile, Palette::default_palette()));
  const auto poses = sample_cameras(mask, c.world, 100, 1011);
  const Intrinsics k{192, 144, 60};
  std::mt19937_64 rng(1012);
  std::size_t covisible = 0, over = 0;
  double worst = 0.0, sum = 0.0, worst_over_cos = 0.0;
  bool identical = true;
  for (const CameraPose& a : poses) {
    CameraPose b = a;
    do {
      const double phi = 2.0 * std::numbers::pi * to_unit(rng());
      b.position = a.position + Vec3{0.1 * std::cos(phi), 0.1 * std::sin(phi), 0.0};
    } while (!pose_clear(c.world, b));
    const RenderOutput ra = render_view(c.world, a, k), rb = render_view(c.world, b, k);
    identical = identical && render_view(c.world, a, k, {}, 1) == ra;
    for (int y = 0; y < k.height; ++y)
      for (int x = 0; x < k.width; ++x) {
        const float da = ra.depth(x, y);
        if (!std::isfinite(da)) continue;
        const Ray ray_a = camera_ray(a, k, x + 0.5, y + 0.5);
        const Vec3 p = ray_a.origin + ray_a.direction * double(da);
        const auto uv = project(b, k, p);
        if (!uv || (*uv)[0] < 0 || (*uv)[1] < 0 || (*uv)[0] >= k.width || (*uv)[1] >= k.height) continue;
        const int bx = static_cast<int>((*uv)[0]), by = static_cast<int>((*uv)[1]);
        const float db = rb.depth(bx, by);
        if (!std::isfinite(db)) continue;
        const Ray ray_b = camera_ray(b, k, bx + 0.5, by + 0.5);
        const HitRecord ha = traverse(c.world, ray_a, std::numeric_limits<double>::max());
        const HitRecord hb = traverse(c.world, ray_b, std::numeric_limits<double>::max());
        if (!ha.hit || !hb.hit || ha.voxel != hb.voxel) continue;
        const double err = length(ray_b.origin + ray_b.direction * double(db) - p);
        ++covisible;
        if (err >= 1.0) {
          ++over;
          worst_over_cos = std::max(worst_over_cos, std::abs(dot(ray_a.direction, ha.face_normal)));
        }
        worst = std::max(worst, err);
        sum += err;
      }
  }
  const double mean = covisible ? sum / double(covisible) : 0.0;
  return {covisible > 0 && over == 0 && identical,
          fmt("%zu co-visible pixels, max error %.3f voxel, mean %.4f, %zu at or over 1 voxel (incidence cosine "
              "<= %.3f); identical pose %s",
              covisible, worst, mean, over, worst_over_cos, identical ? "bit-identical" : "differs")};
}

Outcome end_to_end_determinism() {
  const auto base = std::filesystem::temp_directory_path() / ("infinicity_acceptance_" + std::to_string(::getpid()));
  PipelineConfig cfg;
  cfg.seed = 7;
  cfg.extent_w = cfg.extent_h = 128;
  std::string hashes[2];
  double secs[2] = {0, 0};
  for (int run = 0; run < 2; ++run) {
    cfg.out_dir = base / ("run" + std::to_string(run));
    const auto t0 = Clock::now();
    hashes[run] = pipeline_run(cfg).hash();
    secs[run] = seconds_since(t0);
  }
  std::filesystem::remove_all(base);
  const bool same = hashes[0] == hashes[1];
  return {same && secs[0] < 300.0 && secs[1] < 300.0,
          fmt("manifest hashes %s (%.12s...), runs took %.2f s and %.2f s", same ? "identical" : "differ",
              hashes[0].c_str(), secs[0], secs[1])};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"spatial independence", spatial_independence},
      {"resampling locality", resampling_locality},
      {"calibration oracle", calibration_oracle},
      {"queue invariance", queue_invariance},
      {"round-trips", round_trips},
      {"completion", completion},
      {"traversal oracle", traversal_oracle},
      {"camera validity", camera_validity},
      {"mask morphology", mask_morphology},
      {"cross-view consistency", cross_view_consistency},
      {"end-to-end determinism", end_to_end_determinism},
  };
  int failed = 0, n = 0;
  for (const auto& [name, check] : criteria) {
    ++n;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("criterion %d %s: %s (%s) [%.1f s]\n", n, name, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d/%d criteria passed\n", n - failed, n);
  return failed ? 1 : 0;
}
