#pragma once

// Co-registered category / height / normal rasters, the categorical colour
// palette, and the height-map bilateral cleaner.

#include <cstdint>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "infinicity/core.hpp"

namespace infinicity {

using ClassId = std::uint8_t;

/// World height cap in metres (one 64^3 block; 1 voxel = 1 m).
inline constexpr int kWorldHeight = 64;

// Default class ids. Ids 0 (void), 8 (trunk) and 9 (sky) are reserved for the
// scan, completion and render stages respectively.
namespace cls {
inline constexpr ClassId kVoid = 0;
inline constexpr ClassId kRoad = 1;
inline constexpr ClassId kTerrain = 2;
inline constexpr ClassId kBridge = 3;
inline constexpr ClassId kGreenspace = 4;
inline constexpr ClassId kBuilding = 5;
inline constexpr ClassId kTree = 6;
inline constexpr ClassId kWater = 7;
inline constexpr ClassId kTrunk = 8;
inline constexpr ClassId kSky = 9;
inline constexpr ClassId kRailway = 10;
inline constexpr ClassId kOther = 11;
}  // namespace cls

struct Color {
  double r = 0.0, g = 0.0, b = 0.0;
  friend bool operator==(const Color&, const Color&) = default;
};

inline double color_distance(const Color& a, const Color& b) {
  const double dr = a.r - b.r, dg = a.g - b.g, db = a.b - b.b;
  return std::sqrt(dr * dr + dg * dg + db * db);
}

struct PaletteEntry {
  ClassId id = 0;
  std::string name;
  Color color;
  bool walkable = false;
};

class Palette {
 public:
  Palette() = default;

  explicit Palette(std::vector<PaletteEntry> entries) : entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      for (std::size_t j = 0; j < i; ++j) {
        if (entries_[i].id == entries_[j].id)
          throw InvalidArgument("duplicate palette class id " + std::to_string(entries_[i].id));
        if (entries_[i].color == entries_[j].color)
          throw InvalidArgument("palette colours must be pairwise distinct");
      }
    std::sort(entries_.begin(), entries_.end(),
              [](const PaletteEntry& a, const PaletteEntry& b) { return a.id < b.id; });
  }

  /// Twelve classes evenly spaced on the HSV hue ring (S = V = 1).
  static Palette default_palette() {
    static const char* names[12] = {"void",  "road", "terrain", "bridge",  "greenspace", "building",
                                    "tree",  "water", "trunk",  "sky",     "railway",    "other"};
    std::vector<PaletteEntry> e;
    for (int i = 0; i < 12; ++i) {
      const double hue = 30.0 * i;
      e.push_back({static_cast<ClassId>(i), names[i], hue_color(hue),
                   i == cls::kRoad || i == cls::kTerrain || i == cls::kBridge ||
                       i == cls::kGreenspace});
    }
    return Palette(std::move(e));
  }

  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<PaletteEntry>& entries() const { return entries_; }

  const PaletteEntry* find(ClassId id) const {
    for (const auto& e : entries_)
      if (e.id == id) return &e;
    return nullptr;
  }

  const Color& color(ClassId id) const {
    if (const auto* e = find(id)) return e->color;
    throw OutOfRange("class id " + std::to_string(id) + " not in palette");
  }

  bool walkable(ClassId id) const {
    const auto* e = find(id);
    return e != nullptr && e->walkable;
  }

  /// Minimum pairwise colour distance (delta).
  double min_separation() const {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < entries_.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        best = std::min(best, color_distance(entries_[i].color, entries_[j].color));
    return best;
  }

  /// Nearest palette entry; ties go to the lowest class id.
  ClassId nearest(const Color& c) const {
    if (entries_.empty()) throw InvalidArgument("empty palette");
    ClassId best = entries_.front().id;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& e : entries_) {  // sorted by id, strict < keeps the lowest on ties
      const double d = color_distance(c, e.color);
      if (d < best_d) {
        best_d = d;
        best = e.id;
      }
    }
    return best;
  }

  std::uint64_t hash() const {
    ByteWriter w;
    for (const auto& e : entries_) {
      w.u8(e.id);
      w.u32(static_cast<std::uint32_t>(e.name.size()));
      w.tag(e.name);
      w.f32(static_cast<float>(e.color.r));
      w.f32(static_cast<float>(e.color.g));
      w.f32(static_cast<float>(e.color.b));
      w.u8(e.walkable ? 1 : 0);
    }
    return fnv1a64(w.buffer());
  }

  nlohmann::json to_json() const {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& e : entries_)
      classes.push_back({{"id", e.id},
                         {"name", e.name},
                         {"color", {e.color.r, e.color.g, e.color.b}},
                         {"walkable", e.walkable}});
    return {{"classes", classes}};
  }

  static Palette from_json(const nlohmann::json& j) {
    std::vector<PaletteEntry> e;
    for (const auto& c : j.at("classes")) {
      const int id = c.at("id").get<int>();
      if (id < 0 || id > 255) throw InvalidArgument("palette class id out of range");
      const auto& col = c.at("color");
      e.push_back({static_cast<ClassId>(id), c.at("name").get<std::string>(),
                   {col.at(0).get<double>(), col.at(1).get<double>(), col.at(2).get<double>()},
                   c.value("walkable", false)});
    }
    return Palette(std::move(e));
  }

 private:
  static Color hue_color(double hue_deg) {
    const double h = hue_deg / 60.0;
    const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
    switch (static_cast<int>(h)) {
      case 0: return {1, x, 0};
      case 1: return {x, 1, 0};
      case 2: return {0, 1, x};
      case 3: return {0, x, 1};
      case 4: return {x, 0, 1};
      default: return {1, 0, x};
    }
  }

  std::vector<PaletteEntry> entries_;
};

// ---------------------------------------------------------------------------

/// Aligned category / height / normal rasters for one map region. Normals
/// are held in the same 16-bit fixed-point form the .icdn format uses, so a
/// tile survives a file round-trip unchanged.
struct CdnTile {
  Grid2<ClassId> category;
  Grid2<std::uint16_t> height_m;
  Grid2<PackedNormal> normal;

  CdnTile() = default;
  CdnTile(int width, int height)
      : category(width, height, cls::kVoid), height_m(width, height, 0),
        normal(width, height, pack_normal(kUp)) {}

  int width() const { return category.width(); }
  int height() const { return category.height(); }

  Vec3 normal_at(int x, int y) const { return unpack_normal(normal(x, y)); }
  void set_normal(int x, int y, Vec3 n) { normal(x, y) = pack_normal(n); }

  friend bool operator==(const CdnTile&, const CdnTile&) = default;

  /// Throws if any channel invariant is broken.
  void validate() const {
    if (height_m.width() != width() || height_m.height() != height() ||
        normal.width() != width() || normal.height() != height())
      throw InvalidArgument("CDN channels differ in size");
    for (auto h : height_m.data())
      if (h > kWorldHeight) throw OutOfRange("height exceeds world cap");
    for (const auto& q : normal.data())
      if (q[0] == 0 && q[1] == 0 && q[2] == 0) throw InvalidArgument("zero normal");
  }

  CdnTile crop(int x0, int y0, int w, int h) const {
    if (x0 < 0 || y0 < 0 || x0 + w > width() || y0 + h > height())
      throw OutOfRange("crop outside tile");
    CdnTile out(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        out.category(x, y) = category(x0 + x, y0 + y);
        out.height_m(x, y) = height_m(x0 + x, y0 + y);
        out.normal(x, y) = normal(x0 + x, y0 + y);
      }
    return out;
  }

  void paste(const CdnTile& src, int x0, int y0) {
    for (int y = 0; y < src.height(); ++y)
      for (int x = 0; x < src.width(); ++x) {
        category(x0 + x, y0 + y) = src.category(x, y);
        height_m(x0 + x, y0 + y) = src.height_m(x, y);
        normal(x0 + x, y0 + y) = src.normal(x, y);
      }
  }
};

// ---------------------------------------------------------------------------
// Category <-> colour

inline Grid2<ClassId> decode_category(const Grid2<Color>& image, const Palette& palette) {
  if (palette.empty()) throw InvalidArgument("empty palette");
  Grid2<ClassId> out(image.width(), image.height());
  for (std::size_t i = 0; i < image.size(); ++i) out.data()[i] = palette.nearest(image.data()[i]);
  return out;
}

inline Grid2<Color> encode_category(const Grid2<ClassId>& ids, const Palette& palette) {
  Grid2<Color> out(ids.width(), ids.height());
  for (std::size_t i = 0; i < ids.size(); ++i) out.data()[i] = palette.color(ids.data()[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Bilateral filtering of integer height maps

struct BilateralPass {
  int kernel_radius = 1;
  double space_sigma = 1.0;
  double value_sigma = 1.0;
};

/// Gaussian bilateral filter, passes applied in order. Borders clamp; each
/// pass rounds its output half-up to whole metres.
inline Grid2<std::uint16_t> bilateral_filter(const Grid2<std::uint16_t>& height,
                                             const std::vector<BilateralPass>& passes) {
  if (passes.empty()) throw InvalidArgument("bilateral filter needs at least one pass");
  for (const auto& p : passes) {
    if (!(p.space_sigma > 0.0) || !(p.value_sigma > 0.0))
      throw InvalidArgument("bilateral sigmas must be positive");
    if (p.kernel_radius < 0) throw InvalidArgument("negative kernel radius");
  }

  Grid2<std::uint16_t> cur = height;
  for (const auto& pass : passes) {
    const int r = pass.kernel_radius;
    const int side = 2 * r + 1;
    std::vector<double> spatial(static_cast<std::size_t>(side) * side);
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx)
        spatial[static_cast<std::size_t>((dy + r) * side + dx + r)] =
            std::exp(-(dx * dx + dy * dy) / (2.0 * pass.space_sigma * pass.space_sigma));
    const double inv_2vs2 = 1.0 / (2.0 * pass.value_sigma * pass.value_sigma);

    Grid2<std::uint16_t> next(cur.width(), cur.height());
    for (int y = 0; y < cur.height(); ++y)
      for (int x = 0; x < cur.width(); ++x) {
        const double center = cur(x, y);
        double num = 0.0, den = 0.0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const double v = cur.clamped(x + dx, y + dy);
            const double dv = v - center;
            const double w = spatial[static_cast<std::size_t>((dy + r) * side + dx + r)] *
                             std::exp(-dv * dv * inv_2vs2);
            num += w * v;
            den += w;
          }
        next(x, y) = static_cast<std::uint16_t>(std::floor(num / den + 0.5));
      }
    cur = std::move(next);
  }
  return cur;
}

/// Large kernel / tight value threshold to square up building edges, then a
/// small kernel with a looser threshold to drop isolated spikes.
inline std::vector<BilateralPass> default_clean_schedule() {
  return {{7, 3.0, 4.0}, {2, 1.0, 8.0}};
}

inline Grid2<std::uint16_t> default_clean(const Grid2<std::uint16_t>& height) {
  if (height.size() == 0) return height;
  return bilateral_filter(height, default_clean_schedule());
}

/// Cleans the height channel in place; category and normal are left as-is.
inline void clean_tile(CdnTile& tile) { tile.height_m = default_clean(tile.height_m); }

// ---------------------------------------------------------------------------
// .icdn files

inline constexpr std::uint32_t kIcdnVersion = 1;

inline std::vector<std::uint8_t> write_icdn(const CdnTile& tile, const Palette& palette) {
  tile.validate();
  ByteWriter w;
  w.tag("ICDN");
  w.u32(kIcdnVersion);
  w.u32(static_cast<std::uint32_t>(tile.width()));
  w.u32(static_cast<std::uint32_t>(tile.height()));
  w.u64(palette.hash());
  for (auto c : tile.category.data()) w.u8(c);
  for (auto h : tile.height_m.data()) w.u16(h);
  for (const auto& q : tile.normal.data()) {
    w.i16(q[0]);
    w.i16(q[1]);
    w.i16(q[2]);
  }
  return w.take();
}

struct IcdnFile {
  CdnTile tile;
  std::uint64_t palette_hash = 0;
};

inline IcdnFile read_icdn(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("ICDN");
  const auto version_at = r.offset();
  if (r.u32() != kIcdnVersion) throw ParseError(version_at, "unsupported .icdn version");
  const std::uint32_t w = r.u32(), h = r.u32();
  if (w > 1u << 16 || h > 1u << 16) throw ParseError(r.offset(), "tile dimensions too large");
  IcdnFile f;
  f.palette_hash = r.u64();
  f.tile = CdnTile(static_cast<int>(w), static_cast<int>(h));
  for (auto& c : f.tile.category.data()) c = r.u8();
  for (auto& v : f.tile.height_m.data()) {
    const auto at = r.offset();
    v = r.u16();
    if (v > kWorldHeight) throw ParseError(at, "height exceeds world cap");
  }
  for (auto& q : f.tile.normal.data()) {
    const auto at = r.offset();
    for (auto& c : q) c = r.i16();
    if (q[0] == 0 && q[1] == 0 && q[2] == 0) throw ParseError(at, "zero normal");
  }
  if (!r.at_end()) throw ParseError(r.offset(), "trailing bytes after .icdn planes");
  return f;
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path);
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace infinicity
