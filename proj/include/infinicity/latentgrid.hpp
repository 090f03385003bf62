#pragma once

// Global latent plus an unbounded, lazily materialised grid of local latent
// cells. Cells are keyed by integer (i, j); cell (i, j) is centred at
// ((i + 0.5) * stride, (j + 0.5) * stride) in pixel coordinates, where pixel
// (x, y) sits at the point (x, y).

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <vector>

#include "infinicity/core.hpp"

namespace infinicity {

struct CellCoord {
  std::int64_t i = 0, j = 0;
  friend bool operator==(const CellCoord&, const CellCoord&) = default;
  friend auto operator<=>(const CellCoord&, const CellCoord&) = default;
};

struct ReceptiveField {
  std::int64_t radius_px = 64;
};

/// Per-pixel noise redrawn inside rect; later overrides win.
struct NoiseOverride {
  Rect rect;
  std::uint64_t key = 0;
  friend bool operator==(const NoiseOverride&, const NoiseOverride&) = default;
};

namespace detail {
inline constexpr std::uint64_t kGlobalTag = 0x676c6f62616cULL;  // "global"
inline constexpr std::uint64_t kCellTag = 0x63656c6cULL;        // "cell"
}  // namespace detail

class LatentField {
 public:
  LatentField(std::uint64_t seed, int global_dim, int local_dim, int cell_stride)
      : seed_(seed), global_dim_(global_dim), local_dim_(local_dim), cell_stride_(cell_stride),
        mutex_(std::make_unique<std::mutex>()) {
    if (global_dim <= 0 || local_dim <= 0 || cell_stride <= 0)
      throw InvalidArgument("latent dimensions and cell stride must be positive");
    global_.resize(static_cast<std::size_t>(global_dim));
    for (int k = 0; k < global_dim; ++k)
      global_[static_cast<std::size_t>(k)] = static_cast<float>(
          to_gaussian(prf(seed, detail::kGlobalTag, as_u64(k), 0),
                      prf(seed, detail::kGlobalTag, as_u64(k), 1)));
  }

  LatentField(const LatentField& o)
      : seed_(o.seed_), global_dim_(o.global_dim_), local_dim_(o.local_dim_),
        cell_stride_(o.cell_stride_), global_(o.global_), noise_(o.noise_),
        mutex_(std::make_unique<std::mutex>()) {
    std::lock_guard lock(*o.mutex_);
    cells_ = o.cells_;
  }
  LatentField& operator=(const LatentField& o) {
    if (this != &o) {
      LatentField tmp(o);
      *this = std::move(tmp);
    }
    return *this;
  }
  LatentField(LatentField&&) noexcept = default;
  LatentField& operator=(LatentField&&) noexcept = default;

  std::uint64_t seed() const { return seed_; }
  int global_dim() const { return global_dim_; }
  int local_dim() const { return local_dim_; }
  int cell_stride() const { return cell_stride_; }
  std::span<const float> global_latent() const { return global_; }

  /// Local latent of a cell, materialised on first access. The returned span
  /// stays valid for the lifetime of the field.
  std::span<const float> cell(CellCoord c) const {
    std::lock_guard lock(*mutex_);
    auto it = cells_.find(c);
    if (it == cells_.end()) it = cells_.emplace(c, sample_cell(seed_, c)).first;
    return it->second;
  }

  bool is_materialized(CellCoord c) const {
    std::lock_guard lock(*mutex_);
    return cells_.count(c) != 0;
  }

  std::size_t materialized_count() const {
    std::lock_guard lock(*mutex_);
    return cells_.size();
  }

  /// Replaces a cell's latent (resampling, snapshot loading).
  void set_cell(CellCoord c, std::vector<float> v) {
    if (v.size() != static_cast<std::size_t>(local_dim_))
      throw InvalidArgument("local latent has wrong dimension");
    std::lock_guard lock(*mutex_);
    cells_[c] = std::move(v);
  }

  /// Snapshot of materialised cells, sorted by (i, j).
  std::vector<std::pair<CellCoord, std::vector<float>>> materialized() const {
    std::lock_guard lock(*mutex_);
    return {cells_.begin(), cells_.end()};
  }

  const std::vector<NoiseOverride>& noise_overrides() const { return noise_; }
  void add_noise_override(const Rect& rect, std::uint64_t key) {
    if (rect.empty()) throw InvalidArgument("noise override rect is empty");
    noise_.push_back({rect, key});
  }

  /// Centre of a cell in pixel coordinates.
  double cell_center_x(std::int64_t i) const { return (static_cast<double>(i) + 0.5) * cell_stride_; }
  double cell_center_y(std::int64_t j) const { return (static_cast<double>(j) + 0.5) * cell_stride_; }

  std::vector<float> sample_cell(std::uint64_t key, CellCoord c) const {
    std::vector<float> v(static_cast<std::size_t>(local_dim_));
    for (int k = 0; k < local_dim_; ++k)
      v[static_cast<std::size_t>(k)] = static_cast<float>(
          to_gaussian(prf(key, detail::kCellTag, as_u64(c.i), as_u64(c.j), as_u64(2 * k)),
                      prf(key, detail::kCellTag, as_u64(c.i), as_u64(c.j), as_u64(2 * k + 1))));
    return v;
  }

 private:
  std::uint64_t seed_;
  int global_dim_, local_dim_, cell_stride_;
  std::vector<float> global_;
  std::vector<NoiseOverride> noise_;
  mutable std::map<CellCoord, std::vector<float>> cells_;
  std::unique_ptr<std::mutex> mutex_;
};

/// Defaults: D = 64, d = 16, stride 32 px.
inline LatentField sample_field(std::uint64_t seed, int global_dim = 64, int local_dim = 16,
                                int cell_stride = 32) {
  return LatentField(seed, global_dim, local_dim, cell_stride);
}

// ---------------------------------------------------------------------------
// Calibration

/// Squared Euclidean distance from a point to the closed box of pixel
/// positions covered by rect, [x, x + w - 1] x [y, y + h - 1].
inline double distance_sq_to_rect(double px, double py, const Rect& rect) {
  const double x0 = static_cast<double>(rect.x), x1 = static_cast<double>(rect.right() - 1);
  const double y0 = static_cast<double>(rect.y), y1 = static_cast<double>(rect.bottom() - 1);
  const double dx = px < x0 ? x0 - px : (px > x1 ? px - x1 : 0.0);
  const double dy = py < y0 ? y0 - py : (py > y1 ? py - y1 : 0.0);
  return dx * dx + dy * dy;
}

/// Every cell whose influence disc (centre dilated by the receptive radius,
/// closed) meets a pixel position of rect.
inline std::set<CellCoord> calibrate_region(const Rect& rect, const ReceptiveField& rf,
                                            int cell_stride) {
  if (rect.empty()) throw InvalidArgument("calibrate_region: empty rect");
  if (rf.radius_px < 0) throw InvalidArgument("negative receptive radius");
  if (cell_stride <= 0) throw InvalidArgument("cell stride must be positive");
  const double s = cell_stride;
  const double r = static_cast<double>(rf.radius_px);
  const auto lo = [&](double v) { return static_cast<std::int64_t>(std::floor(v / s - 0.5)) - 1; };
  const auto hi = [&](double v) { return static_cast<std::int64_t>(std::ceil(v / s - 0.5)) + 1; };
  std::set<CellCoord> out;
  for (std::int64_t j = lo(static_cast<double>(rect.y) - r); j <= hi(static_cast<double>(rect.bottom() - 1) + r); ++j)
    for (std::int64_t i = lo(static_cast<double>(rect.x) - r); i <= hi(static_cast<double>(rect.right() - 1) + r); ++i) {
      const double cx = (static_cast<double>(i) + 0.5) * s, cy = (static_cast<double>(j) + 0.5) * s;
      if (distance_sq_to_rect(cx, cy, rect) <= r * r) out.insert({i, j});
    }
  return out;
}

/// Pixels whose output can change when the cells of `resampled` are redrawn:
/// the rect dilated by the receptive radius.
inline Rect affected_footprint(const Rect& rect, const ReceptiveField& rf) {
  return rect.dilated(rf.radius_px);
}

/// Redraws the local latents of the cells centred inside rect and the
/// per-pixel noise of rect itself. Pixels farther than rf.radius_px from rect
/// are unaffected.
inline LatentField resample_region(const LatentField& field, const Rect& rect,
                                   const ReceptiveField& rf, std::uint64_t seed) {
  (void)rf;  // the locality bound only; the redrawn set is the zero-dilation calibration
  LatentField out(field);
  const std::uint64_t key = prf(seed, field.seed(), 0x726573616d706c65ULL);  // "resample"
  for (const auto& c : calibrate_region(rect, ReceptiveField{0}, field.cell_stride()))
    out.set_cell(c, out.sample_cell(key, c));
  out.add_noise_override(rect, prf(key, 0x6e6f697365ULL));  // "noise"
  return out;
}

// ---------------------------------------------------------------------------
// .iclf snapshots

inline constexpr std::uint32_t kIclfVersion = 2;  // 1: no noise section

inline std::vector<std::uint8_t> write_iclf(const LatentField& field) {
  ByteWriter w;
  w.tag("ICLF");
  w.u32(kIclfVersion);
  w.u32(static_cast<std::uint32_t>(field.global_dim()));
  w.u32(static_cast<std::uint32_t>(field.local_dim()));
  w.u32(static_cast<std::uint32_t>(field.cell_stride()));
  w.u64(field.seed());
  const auto cells = field.materialized();
  w.u64(cells.size());
  for (const auto& [c, v] : cells) {
    w.i64(c.i);
    w.i64(c.j);
    for (float f : v) w.f32(f);
  }
  w.u64(field.noise_overrides().size());
  for (const auto& n : field.noise_overrides()) {
    w.i64(n.rect.x);
    w.i64(n.rect.y);
    w.i64(n.rect.w);
    w.i64(n.rect.h);
    w.u64(n.key);
  }
  return w.take();
}

inline LatentField read_iclf(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("ICLF");
  const auto at = r.offset();
  const auto version = r.u32();
  if (version != 1 && version != kIclfVersion) throw ParseError(at, "unsupported .iclf version");
  const auto D = r.u32(), d = r.u32(), stride = r.u32();
  const auto seed = r.u64();
  if (D == 0 || d == 0 || stride == 0 || D > 4096 || d > 4096 || stride > (1u << 20))
    throw ParseError(at, "invalid latent field header");
  LatentField field(seed, static_cast<int>(D), static_cast<int>(d), static_cast<int>(stride));
  const auto count_at = r.offset();
  const auto count = r.u64();
  if (count > r.remaining() / (16 + 4ull * d)) throw ParseError(count_at, "cell count exceeds file size");
  CellCoord prev{};
  for (std::uint64_t n = 0; n < count; ++n) {
    const auto cell_at = r.offset();
    CellCoord c{r.i64(), r.i64()};
    if (n > 0 && !(prev < c)) throw ParseError(cell_at, "cells not strictly sorted");
    std::vector<float> v(d);
    for (auto& f : v) f = r.f32();
    field.set_cell(c, std::move(v));
    prev = c;
  }
  if (version >= 2) {
    const auto noise_at = r.offset();
    const auto n = r.u64();
    if (n > r.remaining() / 40) throw ParseError(noise_at, "noise override count exceeds file size");
    for (std::uint64_t k = 0; k < n; ++k) {
      const auto rect_at = r.offset();
      const Rect rect{r.i64(), r.i64(), r.i64(), r.i64()};
      if (rect.empty()) throw ParseError(rect_at, "empty noise override rect");
      field.add_noise_override(rect, r.u64());
    }
  }
  if (!r.at_end()) throw ParseError(r.offset(), "trailing bytes after .iclf cells");
  return field;
}

}  // namespace infinicity
