#pragma once

// Procedural stand-in for the learned infinite-pixel map generator.
//
// Each output pixel is a pure function of the global latent and of the local
// latent cells whose centres lie within radius_px of the pixel. Local latents
// are blended with the compact kernel (1 - r^2/R^2)^2, renormalised to unit
// variance, and decoded into a road grid, water, lots of buildings, parks and
// trees. Lot-level attributes (roof height, land use) are evaluated at the lot
// centre with the radius shrunk by the lot's reach, so the per-pixel bound
// still holds. The category channel comes out as a jittered palette colour.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <span>
#include <thread>
#include <vector>

#include "infinicity/latentgrid.hpp"
#include "infinicity/satmap.hpp"

namespace infinicity {

struct GeneratorConfig {
  int patch_size = 64;
  ReceptiveField rf{64};
  unsigned workers = 0;  // 0 = hardware concurrency
};

struct PatchGeneratorSpec {
  int patch_size_px = 64;
  int palette_size = 12;
  bool deterministic = true;
};

/// Raw generator output for one rectangle, before palette decoding.
struct PatchOutput {
  Rect rect;
  Grid2<Color> color;
  Grid2<float> height;
  Grid2<Vec3> normal;

  friend bool operator==(const PatchOutput&, const PatchOutput&) = default;
};

class ProceduralMapGenerator {
 public:
  static constexpr int kRoadPeriod = 64;
  static constexpr int kRoadWidth = 10;
  static constexpr int kLotSize = 32;
  // Farthest a lot pixel sits from its lot centre, rounded up.
  static constexpr int kLotReach = 23;

  explicit ProceduralMapGenerator(GeneratorConfig config = {},
                                  Palette palette = Palette::default_palette())
      : config_(config), palette_(std::move(palette)) {
    if (config_.patch_size <= 0) throw InvalidArgument("patch size must be positive");
    if (config_.rf.radius_px < 0) throw InvalidArgument("negative receptive radius");
    delta_ = palette_.min_separation();
    for (ClassId c : {cls::kRoad, cls::kTerrain, cls::kBridge, cls::kGreenspace, cls::kBuilding,
                      cls::kTree, cls::kWater})
      if (!palette_.find(c)) throw InvalidArgument("palette lacks a class the generator emits");
  }

  const GeneratorConfig& config() const { return config_; }
  const Palette& palette() const { return palette_; }
  const ReceptiveField& receptive_field() const { return config_.rf; }
  int patch_size() const { return config_.patch_size; }

  PatchGeneratorSpec spec() const {
    return {config_.patch_size, static_cast<int>(palette_.size()), true};
  }

  void check_field(const LatentField& field) const {
    if (config_.patch_size % field.cell_stride() != 0)
      throw InvalidArgument("cell stride must divide the generator patch size");
  }

  /// Generates any rectangle; native patches are just the common case.
  PatchOutput generate(const LatentField& field, const Rect& rect) const {
    if (rect.empty()) throw InvalidArgument("generate: empty rect");
    check_field(field);
    Context ctx(*this, field, rect);
    PatchOutput out{rect, Grid2<Color>(int(rect.w), int(rect.h)),
                    Grid2<float>(int(rect.w), int(rect.h)), Grid2<Vec3>(int(rect.w), int(rect.h))};
    for (int y = 0; y < rect.h; ++y)
      for (int x = 0; x < rect.w; ++x) {
        const Pixel p = ctx.pixel(rect.x + x, rect.y + y);
        out.color(x, y) = p.color;
        out.height(x, y) = p.height;
        out.normal(x, y) = p.normal;
      }
    return out;
  }

  /// Stacked evaluation of several rectangles. Results are positionally
  /// aligned with the input regardless of worker scheduling.
  std::vector<PatchOutput> generate_batch(const LatentField& field,
                                          std::span<const Rect> rects) const {
    std::vector<PatchOutput> out(rects.size());
    unsigned workers = config_.workers ? config_.workers : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min<unsigned>(workers, static_cast<unsigned>(rects.size()));
    if (workers <= 1) {
      for (std::size_t i = 0; i < rects.size(); ++i) out[i] = generate(field, rects[i]);
      return out;
    }
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          try {
            for (std::size_t i = w; i < rects.size(); i += workers) out[i] = generate(field, rects[i]);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    return out;
  }

 private:
  struct Pixel {
    Color color;
    float height;
    Vec3 normal;
  };

  static constexpr int kChannels = 8;
  using Features = std::array<double, kChannels>;

  // Latents for every cell that can reach the rectangle, gathered once.
  class Context {
   public:
    Context(const ProceduralMapGenerator& gen, const LatentField& field, const Rect& rect)
        : gen_(gen), radius_(static_cast<double>(gen.config_.rf.radius_px)),
          stride_(field.cell_stride()) {
      const auto r = gen.config_.rf.radius_px;
      i0_ = floor_div(rect.x - r, stride_) - 1;
      j0_ = floor_div(rect.y - r, stride_) - 1;
      ni_ = floor_div(rect.right() + r, stride_) + 2 - i0_;
      nj_ = floor_div(rect.bottom() + r, stride_) + 2 - j0_;
      const int d = field.local_dim();
      latents_.resize(static_cast<std::size_t>(ni_ * nj_ * kChannels));
      for (std::int64_t j = 0; j < nj_; ++j)
        for (std::int64_t i = 0; i < ni_; ++i) {
          const auto v = field.cell({i0_ + i, j0_ + j});
          for (int k = 0; k < kChannels; ++k)
            latents_[static_cast<std::size_t>((j * ni_ + i) * kChannels + k)] = v[static_cast<std::size_t>(k % d)];
        }
      // Global latent -> per-channel bias through a fixed projection.
      const auto g = field.global_latent();
      for (int k = 0; k < kChannels; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j)
          s += g[j] * to_signed_unit(prf(0x70726f6aULL, as_u64(k), j));
        bias_[static_cast<std::size_t>(k)] = 0.5 * s / std::sqrt(static_cast<double>(g.size()));
      }
      noise_key_ = 0;
      for (float f : g) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        noise_key_ = splitmix64(noise_key_ ^ bits);
      }
      for (const auto& n : field.noise_overrides())
        if (n.rect.intersects(rect)) noise_.push_back({n.rect, splitmix64(noise_key_ ^ n.key)});
    }

    // Kernel blend of cell latents around point (px, py) with support radius.
    Features mix(double px, double py, double radius) const {
      Features f{};
      double wsq = 0.0;
      const double s = stride_;
      const auto ia = static_cast<std::int64_t>(std::ceil((px - radius) / s - 0.5));
      const auto ib = static_cast<std::int64_t>(std::floor((px + radius) / s - 0.5));
      const auto ja = static_cast<std::int64_t>(std::ceil((py - radius) / s - 0.5));
      const auto jb = static_cast<std::int64_t>(std::floor((py + radius) / s - 0.5));
      const double r2 = radius * radius;
      for (std::int64_t j = ja; j <= jb; ++j)
        for (std::int64_t i = ia; i <= ib; ++i) {
          const double dx = (static_cast<double>(i) + 0.5) * s - px;
          const double dy = (static_cast<double>(j) + 0.5) * s - py;
          const double d2 = dx * dx + dy * dy;
          double w;
          if (r2 == 0.0) {
            w = d2 == 0.0 ? 1.0 : 0.0;
          } else {
            if (d2 > r2) continue;
            const double t = 1.0 - d2 / r2;
            w = t * t;
          }
          if (w == 0.0) continue;
          const auto base = static_cast<std::size_t>(((j - j0_) * ni_ + (i - i0_)) * kChannels);
          for (int k = 0; k < kChannels; ++k) f[static_cast<std::size_t>(k)] += w * latents_[base + static_cast<std::size_t>(k)];
          wsq += w * w;
        }
      const double norm = wsq > 0.0 ? 1.0 / std::sqrt(wsq) : 0.0;
      for (int k = 0; k < kChannels; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        f[kk] = f[kk] * norm + bias_[kk];
      }
      return f;
    }

    Pixel pixel(std::int64_t x, std::int64_t y) const {
      std::uint64_t nk = noise_key_;
      for (auto it = noise_.rbegin(); it != noise_.rend(); ++it)
        if (it->rect.contains(x, y)) {
          nk = it->key;
          break;
        }
      const double px = static_cast<double>(x), py = static_cast<double>(y);
      const Features a = mix(px, py, radius_);

      const std::int64_t rx = floor_mod(x, kRoadPeriod), ry = floor_mod(y, kRoadPeriod);
      const bool road = (rx < kRoadWidth || ry < kRoadWidth) && a[1] > -1.3;
      const bool water = a[0] > 1.2;

      ClassId cls_id;
      double height = 0.0;
      Vec3 normal = kUp;

      if (road && water) {
        cls_id = cls::kBridge;
        height = 4.0;
      } else if (road) {
        cls_id = cls::kRoad;
      } else if (water) {
        cls_id = cls::kWater;
      } else {
        const Features lot = lot_features(x, y, a);
        const std::int64_t lx = floor_mod(x, kLotSize), ly = floor_mod(y, kLotSize);
        const bool footprint = lx >= 2 && lx < kLotSize - 2 && ly >= 2 && ly < kLotSize - 2 &&
                               rx >= kRoadWidth + 2 && ry >= kRoadWidth + 2;
        if (footprint && lot[2] > -0.1) {
          cls_id = cls::kBuilding;
          height = 6.0 + std::floor(36.0 * std::clamp((lot[3] + 2.0) / 4.0, 0.0, 0.999));
        } else {
          const bool park = lot[4] > 0.0;
          cls_id = park ? cls::kGreenspace : cls::kTerrain;
          if (a[5] > (park ? 0.4 : 0.9)) {
            cls_id = cls::kTree;
            height = 5.0 + std::floor(4.0 * to_unit(prf(nk, as_u64(x), as_u64(y), 1)));
            normal = normalize({0.35 * a[6], 0.35 * a[7], 1.0});
          }
        }
      }

      // Sparse single-pixel height spikes, the kind of depth-channel artefact
      // the bilateral cleaner exists to remove.
      if (cls_id != cls::kWater && to_unit(prf(nk, as_u64(x), as_u64(y), 2)) < 0.002)
        height += 2.0 + std::floor(4.0 * to_unit(prf(nk, as_u64(x), as_u64(y), 3)));

      Color c = gen_.palette_.color(cls_id);
      const double j = gen_.delta_ / 4.0;
      c.r = std::clamp(c.r + j * (to_unit(prf(nk, as_u64(x), as_u64(y), 4)) - 0.5), 0.0, 1.0);
      c.g = std::clamp(c.g + j * (to_unit(prf(nk, as_u64(x), as_u64(y), 5)) - 0.5), 0.0, 1.0);
      c.b = std::clamp(c.b + j * (to_unit(prf(nk, as_u64(x), as_u64(y), 6)) - 0.5), 0.0, 1.0);
      return {c, static_cast<float>(std::min(height, kWorldHeight - 1.0)), normal};
    }

   private:
    Features lot_features(std::int64_t x, std::int64_t y, const Features& pixel_level) const {
      if (radius_ < kLotReach) return pixel_level;
      const std::int64_t lot_i = floor_div(x, kLotSize), lot_j = floor_div(y, kLotSize);
      const auto key = std::make_pair(lot_i, lot_j);
      if (auto it = lot_cache_.find(key); it != lot_cache_.end()) return it->second;
      const double cx = static_cast<double>(lot_i * kLotSize + kLotSize / 2);
      const double cy = static_cast<double>(lot_j * kLotSize + kLotSize / 2);
      const Features f = mix(cx, cy, radius_ - kLotReach);
      lot_cache_.emplace(key, f);
      return f;
    }

    const ProceduralMapGenerator& gen_;
    double radius_;
    std::int64_t stride_;
    std::int64_t i0_, j0_, ni_, nj_;
    std::vector<double> latents_;
    Features bias_{};
    std::uint64_t noise_key_ = 0;
    std::vector<NoiseOverride> noise_;
    mutable std::map<std::pair<std::int64_t, std::int64_t>, Features> lot_cache_;
  };

  GeneratorConfig config_;
  Palette palette_;
  double delta_ = 0.0;
};

}  // namespace infinicity
