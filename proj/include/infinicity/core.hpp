#pragma once

// Shared value types, error types, deterministic hashing and little-endian
// byte helpers used across the infinicity headers.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace infinicity {

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class OutOfRange : public Error {
 public:
  using Error::Error;
};

class NoValidPose : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t offset, const std::string& what)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// ---------------------------------------------------------------------------
// Geometry

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  constexpr double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend constexpr Vec3 operator-(Vec3 a) { return {-a.x, -a.y, -a.z}; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return a * s; }
  friend constexpr Vec3 operator/(Vec3 a, double s) { return {a.x / s, a.y / s, a.z / s}; }
  Vec3& operator+=(Vec3 b) { x += b.x; y += b.y; z += b.z; return *this; }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

constexpr double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double length(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalize(Vec3 a) {
  const double n = length(a);
  return n > 0.0 ? a / n : Vec3{0.0, 0.0, 1.0};
}

inline constexpr Vec3 kUp{0.0, 0.0, 1.0};

/// Integer pixel rectangle in global map coordinates, covering
/// [x, x + w) x [y, y + h).
struct Rect {
  std::int64_t x = 0, y = 0, w = 0, h = 0;

  bool empty() const { return w <= 0 || h <= 0; }
  std::int64_t right() const { return x + w; }
  std::int64_t bottom() const { return y + h; }
  bool contains(std::int64_t px, std::int64_t py) const {
    return px >= x && px < x + w && py >= y && py < y + h;
  }
  bool intersects(const Rect& o) const {
    return !empty() && !o.empty() && x < o.right() && o.x < right() && y < o.bottom() &&
           o.y < bottom();
  }
  Rect dilated(std::int64_t r) const { return {x - r, y - r, w + 2 * r, h + 2 * r}; }

  friend bool operator==(const Rect&, const Rect&) = default;
  friend auto operator<=>(const Rect&, const Rect&) = default;
};

inline std::string to_string(const Rect& r) {
  return std::to_string(r.x) + "," + std::to_string(r.y) + "," + std::to_string(r.w) + "," +
         std::to_string(r.h);
}

/// Floor division for possibly negative numerators.
constexpr std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

constexpr std::int64_t floor_mod(std::int64_t a, std::int64_t b) { return a - floor_div(a, b) * b; }

// ---------------------------------------------------------------------------
// Dense 2D raster

template <typename T>
class Grid2 {
 public:
  Grid2() = default;
  Grid2(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), fill) {
    if (width < 0 || height < 0) throw InvalidArgument("negative grid dimensions");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }

  /// Clamp-to-edge read.
  const T& clamped(int x, int y) const {
    return (*this)(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1));
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  friend bool operator==(const Grid2&, const Grid2&) = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// Counter-based deterministic pseudo-random function

constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Keyed hash of a short tuple of integers. Each argument is folded through a
/// full splitmix round, so (seed, a, b, c) and any permutation map to unrelated
/// outputs.
constexpr std::uint64_t prf(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                            std::uint64_t c = 0, std::uint64_t d = 0) {
  std::uint64_t h = splitmix64(seed ^ 0x6a09e667f3bcc908ULL);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b + 0x3c6ef372fe94f82bULL));
  h = splitmix64(h ^ (c + 0xa54ff53a5f1d36f1ULL));
  h = splitmix64(h ^ (d + 0x510e527fade682d1ULL));
  return h;
}

/// Uniform double in [0, 1) from the top 53 bits.
constexpr double to_unit(std::uint64_t u) { return static_cast<double>(u >> 11) * 0x1.0p-53; }

/// Uniform double in [-1, 1).
constexpr double to_signed_unit(std::uint64_t u) { return 2.0 * to_unit(u) - 1.0; }

/// Standard normal sample from two hashed words (Box-Muller).
inline double to_gaussian(std::uint64_t u1, std::uint64_t u2) {
  const double a = 1.0 - to_unit(u1);  // (0, 1]
  const double b = to_unit(u2);
  return std::sqrt(-2.0 * std::log(a)) * std::cos(2.0 * 3.14159265358979323846 * b);
}

constexpr std::uint64_t as_u64(std::int64_t v) { return static_cast<std::uint64_t>(v); }

/// FNV-1a 64-bit, used for short in-format checksums (palette hash).
constexpr std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                                std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Little-endian byte streams

class ByteWriter {
 public:
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void tag(std::string_view t) { for (char c : t) buf_.push_back(static_cast<std::uint8_t>(c)); }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void i16(std::int16_t v) { put(static_cast<std::uint16_t>(v), 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v), 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v), 8); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }

  std::vector<std::uint8_t>& buffer() { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  void expect_tag(std::string_view t) {
    need(t.size(), "magic");
    if (std::memcmp(data_.data() + pos_, t.data(), t.size()) != 0)
      throw ParseError(pos_, "bad magic, expected '" + std::string(t) + "'");
    pos_ += t.size();
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1, "u8")); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2, "u16")); }
  std::int16_t i16() { return static_cast<std::int16_t>(get(2, "i16")); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4, "u32")); }
  std::int32_t i32() { return static_cast<std::int32_t>(get(4, "i32")); }
  std::uint64_t u64() { return get(8, "u64"); }
  std::int64_t i64() { return static_cast<std::int64_t>(get(8, "i64")); }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n, "bytes");
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n)
      throw ParseError(pos_, std::string("truncated stream reading ") + what);
  }
  std::uint64_t get(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Fixed-point unit normals (1.0 = 32767)

using PackedNormal = std::array<std::int16_t, 3>;

inline Vec3 unpack_normal(const PackedNormal& q) {
  const Vec3 v{static_cast<double>(q[0]), static_cast<double>(q[1]), static_cast<double>(q[2])};
  return normalize(v);
}

/// Packs a direction so that pack_normal(unpack_normal(q)) == q for every q
/// this function returns: rounding is iterated to a fixed point of
/// round(32767 * normalize(q)).
inline PackedNormal pack_normal(Vec3 n) {
  auto round_dir = [](Vec3 d) {
    d = normalize(d);
    PackedNormal q;
    for (int i = 0; i < 3; ++i)
      q[i] = static_cast<std::int16_t>(std::clamp<long>(std::lround(d[i] * 32767.0), -32767, 32767));
    return q;
  };
  PackedNormal q = round_dir(n);
  for (int iter = 0; iter < 8; ++iter) {
    const PackedNormal next = round_dir(unpack_normal(q));
    if (next == q) break;
    q = next;
  }
  return q;
}

/// Snaps a normal to the nearest value representable in the on-disk formats.
inline Vec3 canonical_normal(Vec3 n) { return unpack_normal(pack_normal(n)); }

}  // namespace infinicity
