#pragma once

// Lossless raster encoding: PNG through libpng's simplified API, plus the raw
// little-endian float depth format (.idep).

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "infinicity/core.hpp"
#include "infinicity/satmap.hpp"

namespace infinicity {

struct PngImage {
  int width = 0, height = 0, channels = 1;
  bool sixteen_bit = false;
  std::vector<std::uint16_t> samples;  // row-major, interleaved channels
};

namespace detail {

struct PngGuard {
  png_image img;
  PngGuard() {
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
  }
  ~PngGuard() { png_image_free(&img); }
};

inline png_uint_32 png_format(int channels, bool sixteen) {
  png_uint_32 f = channels == 1 ? PNG_FORMAT_GRAY : channels == 3 ? PNG_FORMAT_RGB : 0;
  if (channels != 1 && channels != 3) throw InvalidArgument("png: unsupported channel count " + std::to_string(channels));
  return sixteen ? (f | PNG_FORMAT_FLAG_LINEAR) : f;
}

inline std::vector<std::uint8_t> write_png_raw(png_image& img, const void* pixels, const void* colormap = nullptr) {
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(img, size, 0, pixels, 0, colormap))
    throw Error(std::string("png encode failed: ") + img.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels, 0, colormap))
    throw Error(std::string("png encode failed: ") + img.message);
  out.resize(size);
  return out;
}

}  // namespace detail

/// Encodes 8- or 16-bit gray or RGB samples.
inline std::vector<std::uint8_t> encode_png(const PngImage& im) {
  if (im.width <= 0 || im.height <= 0) throw InvalidArgument("png: empty image");
  const std::size_t n = std::size_t(im.width) * std::size_t(im.height) * std::size_t(im.channels);
  if (im.samples.size() != n) throw InvalidArgument("png: sample count does not match dimensions");
  detail::PngGuard g;
  g.img.width = static_cast<png_uint_32>(im.width);
  g.img.height = static_cast<png_uint_32>(im.height);
  g.img.format = detail::png_format(im.channels, im.sixteen_bit);
  if (im.sixteen_bit) return detail::write_png_raw(g.img, im.samples.data());
  std::vector<std::uint8_t> px(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (im.samples[i] > 255) throw InvalidArgument("png: 8-bit sample out of range");
    px[i] = static_cast<std::uint8_t>(im.samples[i]);
  }
  return detail::write_png_raw(g.img, px.data());
}

/// Decodes to the stored channel layout (gray or RGB; alpha is dropped).
inline PngImage decode_png(std::span<const std::uint8_t> bytes) {
  detail::PngGuard g;
  if (!png_image_begin_read_from_memory(&g.img, bytes.data(), bytes.size()))
    throw ParseError(0, std::string("png: ") + g.img.message);
  PngImage im;
  im.width = static_cast<int>(g.img.width);
  im.height = static_cast<int>(g.img.height);
  im.channels = (g.img.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
  im.sixteen_bit = (g.img.format & PNG_FORMAT_FLAG_LINEAR) != 0;
  g.img.format = detail::png_format(im.channels, im.sixteen_bit);
  const std::size_t n = std::size_t(im.width) * std::size_t(im.height) * std::size_t(im.channels);
  if (im.sixteen_bit) {
    im.samples.resize(n);
    if (!png_image_finish_read(&g.img, nullptr, im.samples.data(), 0, nullptr))
      throw ParseError(0, std::string("png: ") + g.img.message);
  } else {
    std::vector<std::uint8_t> px(n);
    if (!png_image_finish_read(&g.img, nullptr, px.data(), 0, nullptr))
      throw ParseError(0, std::string("png: ") + g.img.message);
    im.samples.assign(px.begin(), px.end());
  }
  return im;
}

inline std::uint16_t to_byte(double v) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline std::vector<std::uint8_t> encode_png(const Grid2<Color>& rgb) {
  PngImage im{rgb.width(), rgb.height(), 3, false, {}};
  im.samples.reserve(rgb.size() * 3);
  for (const Color& c : rgb.data()) {
    im.samples.push_back(to_byte(c.r));
    im.samples.push_back(to_byte(c.g));
    im.samples.push_back(to_byte(c.b));
  }
  return encode_png(im);
}

inline std::vector<std::uint8_t> encode_png(const Grid2<std::uint8_t>& gray) {
  PngImage im{gray.width(), gray.height(), 1, false, {}};
  im.samples.assign(gray.data().begin(), gray.data().end());
  return encode_png(im);
}

inline Grid2<std::uint8_t> decode_gray_png(std::span<const std::uint8_t> bytes) {
  const PngImage im = decode_png(bytes);
  if (im.channels != 1 || im.sixteen_bit) throw ParseError(0, "png: expected an 8-bit grayscale image");
  Grid2<std::uint8_t> out(im.width, im.height, 0);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = static_cast<std::uint8_t>(im.samples[i]);
  return out;
}

/// Class ids as an indexed PNG whose PLTE holds the palette colours, so the
/// file is both viewable and exactly decodable.
inline std::vector<std::uint8_t> encode_category_png(const Grid2<ClassId>& ids, const Palette& palette) {
  std::vector<std::uint8_t> cmap(256 * 3, 0);
  std::size_t entries = 1;
  for (ClassId c : ids.data()) entries = std::max<std::size_t>(entries, std::size_t{c} + 1);
  for (std::size_t c = 0; c < entries; ++c)
    if (palette.find(static_cast<ClassId>(c))) {
      const Color col = palette.color(static_cast<ClassId>(c));
      cmap[3 * c] = static_cast<std::uint8_t>(to_byte(col.r));
      cmap[3 * c + 1] = static_cast<std::uint8_t>(to_byte(col.g));
      cmap[3 * c + 2] = static_cast<std::uint8_t>(to_byte(col.b));
    }
  detail::PngGuard g;
  g.img.width = static_cast<png_uint_32>(ids.width());
  g.img.height = static_cast<png_uint_32>(ids.height());
  g.img.format = PNG_FORMAT_RGB_COLORMAP;
  g.img.colormap_entries = static_cast<png_uint_32>(entries);
  return detail::write_png_raw(g.img, ids.data().data(), cmap.data());
}

/// Reads the palette indices of an indexed PNG back as class ids.
inline Grid2<ClassId> decode_category_png(std::span<const std::uint8_t> bytes) {
  detail::PngGuard g;
  if (!png_image_begin_read_from_memory(&g.img, bytes.data(), bytes.size()))
    throw ParseError(0, std::string("png: ") + g.img.message);
  if (!(g.img.format & PNG_FORMAT_FLAG_COLORMAP)) throw ParseError(0, "png: expected an indexed image");
  const int w = static_cast<int>(g.img.width), h = static_cast<int>(g.img.height);
  g.img.format = PNG_FORMAT_RGB_COLORMAP;
  std::vector<std::uint8_t> cmap(256 * 3);
  Grid2<ClassId> out(w, h, 0);
  if (!png_image_finish_read(&g.img, nullptr, out.data().data(), 0, cmap.data()))
    throw ParseError(0, std::string("png: ") + g.img.message);
  return out;
}

/// Binary mask from any PNG: a pixel is set when its first channel is non-zero.
inline Grid2<std::uint8_t> decode_mask_png(std::span<const std::uint8_t> bytes) {
  const PngImage im = decode_png(bytes);
  Grid2<std::uint8_t> out(im.width, im.height, 0);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = im.samples[i * std::size_t(im.channels)] != 0;
  return out;
}

inline std::vector<std::uint8_t> encode_mask_png(const Grid2<std::uint8_t>& mask) {
  Grid2<std::uint8_t> g(mask.width(), mask.height(), 0);
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = mask.data()[i] ? 255 : 0;
  return encode_png(g);
}

/// Heights in metres as 8-bit gray; values fit because heights are below 64.
inline std::vector<std::uint8_t> encode_height_png(const Grid2<std::uint16_t>& height) {
  Grid2<std::uint8_t> g(height.width(), height.height(), 0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (height.data()[i] > 255) throw OutOfRange("height exceeds 8-bit range");
    g.data()[i] = static_cast<std::uint8_t>(height.data()[i]);
  }
  return encode_png(g);
}

/// Packed normals as 16-bit RGB with each component offset by 32768.
inline std::vector<std::uint8_t> encode_normal_png(const Grid2<PackedNormal>& normals) {
  PngImage im{normals.width(), normals.height(), 3, true, {}};
  im.samples.reserve(normals.size() * 3);
  for (const PackedNormal& q : normals.data())
    for (std::int16_t c : q) im.samples.push_back(static_cast<std::uint16_t>(std::int32_t{c} + 32768));
  return encode_png(im);
}

inline Grid2<PackedNormal> decode_normal_png(std::span<const std::uint8_t> bytes) {
  const PngImage im = decode_png(bytes);
  if (im.channels != 3 || !im.sixteen_bit) throw ParseError(0, "png: expected a 16-bit RGB normal image");
  Grid2<PackedNormal> out(im.width, im.height, PackedNormal{});
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t k = 0; k < 3; ++k)
      out.data()[i][k] = static_cast<std::int16_t>(std::int32_t{im.samples[3 * i + k]} - 32768);
  return out;
}

// ---------------------------------------------------------------------------
// .idep: "IDEP", u32 width, u32 height, then width*height f32 little-endian.

inline std::vector<std::uint8_t> write_idep(const Grid2<float>& depth) {
  ByteWriter w;
  w.tag("IDEP");
  w.u32(static_cast<std::uint32_t>(depth.width()));
  w.u32(static_cast<std::uint32_t>(depth.height()));
  for (float v : depth.data()) w.f32(v);
  return w.take();
}

inline Grid2<float> read_idep(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("IDEP");
  const std::uint32_t w = r.u32(), h = r.u32();
  if (std::uint64_t{w} * h * 4 != r.remaining())
    throw ParseError(r.offset(), "idep: payload size does not match " + std::to_string(w) + "x" + std::to_string(h));
  Grid2<float> out(static_cast<int>(w), static_cast<int>(h), 0.0f);
  for (float& v : out.data()) v = r.f32();
  return out;
}

}  // namespace infinicity
