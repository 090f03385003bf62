#include <gtest/gtest.h>

#include <random>

#include "infinicity/digest.hpp"
#include "infinicity/image_io.hpp"

using namespace infinicity;

TEST(Png, GrayAndRgbRoundTrip) {
  std::mt19937_64 rng(1);
  Grid2<std::uint8_t> g(37, 19, 0);
  for (auto& v : g.data()) v = static_cast<std::uint8_t>(rng());
  EXPECT_EQ(decode_gray_png(encode_png(g)), g);
  PngImage rgb{5, 4, 3, false, {}};
  for (int i = 0; i < 60; ++i) rgb.samples.push_back(static_cast<std::uint16_t>(rng() % 256));
  const PngImage back = decode_png(encode_png(rgb));
  EXPECT_EQ(back.channels, 3);
  EXPECT_EQ(back.samples, rgb.samples);
}

TEST(Png, BytesStartWithSignature) {
  const auto bytes = encode_png(Grid2<std::uint8_t>(2, 2, 7));
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(bytes[1], 'P');
  EXPECT_EQ(bytes[2], 'N');
  EXPECT_EQ(bytes[3], 'G');
}

TEST(Png, CategoryIsIndexedAndExact) {
  const Palette p = Palette::default_palette();
  Grid2<ClassId> ids(64, 64, 0);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) ids(x, y) = static_cast<ClassId>((x / 5 + y / 7) % 12);
  const auto bytes = encode_category_png(ids, p);
  EXPECT_EQ(decode_category_png(bytes), ids);
  // A viewer sees the palette colours.
  const PngImage rgb = decode_png(bytes);
  const Color c = p.color(ids(13, 0));
  EXPECT_EQ(rgb.samples[3 * 13], to_byte(c.r));
  EXPECT_EQ(rgb.samples[3 * 13 + 2], to_byte(c.b));
  EXPECT_THROW(decode_category_png(encode_png(Grid2<std::uint8_t>(2, 2, 0))), ParseError);
}

TEST(Png, NormalsRoundTripAtFullPrecision) {
  std::mt19937_64 rng(2);
  Grid2<PackedNormal> n(16, 16, PackedNormal{});
  for (auto& q : n.data())
    for (auto& c : q) c = static_cast<std::int16_t>(static_cast<int>(rng() % 65535) - 32767);
  EXPECT_EQ(decode_normal_png(encode_normal_png(n)), n);
}

TEST(Png, MaskAndHeight) {
  Grid2<std::uint8_t> m(9, 9, 0);
  m(3, 4) = 1;
  EXPECT_EQ(decode_mask_png(encode_mask_png(m)), m);
  Grid2<std::uint16_t> h(3, 3, 63);
  EXPECT_EQ(decode_gray_png(encode_height_png(h))(1, 1), 63);
  h(0, 0) = 300;
  EXPECT_THROW(encode_height_png(h), OutOfRange);
}

TEST(Png, GarbageIsRejected) {
  const std::vector<std::uint8_t> junk = {1, 2, 3, 4, 5};
  EXPECT_THROW(decode_png(junk), ParseError);
}

TEST(Idep, RoundTripAndSizeCheck) {
  Grid2<float> d(4, 3, 0.0f);
  for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] = 0.25f * float(i);
  d(3, 2) = std::numeric_limits<float>::infinity();
  auto bytes = write_idep(d);
  EXPECT_EQ(bytes.size(), 12u + 4u * 12u);
  EXPECT_EQ(read_idep(bytes), d);
  bytes.pop_back();
  EXPECT_THROW(read_idep(bytes), ParseError);
}

TEST(Digest, KnownVectors) {
  EXPECT_EQ(sha256_hex(std::string_view("abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(std::string_view("")), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  const std::vector<std::uint8_t> m = {'M', 'a', 'n', 'y'};
  EXPECT_EQ(base64_encode(m), "TWFueQ==");
  EXPECT_EQ(base64_encode(std::span<const std::uint8_t>()), "");
}
