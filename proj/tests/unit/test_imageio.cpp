#include "doctest.h"
#include "flexfuse/error.hpp"
#include "flexfuse/imageio.hpp"
#include "test_support.hpp"

using namespace flexfuse;
using flexfuse::testing::TempDir;

namespace {

std::string pgm(std::size_t w, std::size_t h, const std::string& payload, int maxval = 255) {
  return "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n" + std::to_string(maxval) + "\n" + payload;
}

ImageErrc load_error(const std::filesystem::path& p) {
  try {
    load_image(p);
  } catch (const ImageError& e) {
    return e.code();
  }
  FAIL("expected an ImageError");
  return ImageErrc::write_failed;
}

ImageBuffer random_buffer(std::size_t h, std::size_t w, std::size_t c, std::mt19937_64& rng) {
  std::vector<std::uint8_t> bytes(h * w * c);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& b : bytes) b = static_cast<std::uint8_t>(d(rng));
  return ImageBuffer::from_bytes(h, w, c, bytes);
}

}  // namespace

TEST_CASE("PGM bytes map to byte/255") {
  TempDir dir("imageio");
  testing::write_bytes(dir / "a.pgm", pgm(2, 2, std::string("\x00\xff\x80\x40", 4)));
  const ImageBuffer img = load_image(dir / "a.pgm");
  REQUIRE(img.height() == 2);
  REQUIRE(img.width() == 2);
  REQUIRE(img.channels() == 1);
  CHECK(img.at(0, 0) == 0.0f);
  CHECK(img.at(0, 1) == 1.0f);
  CHECK(img.at(1, 0) == doctest::Approx(128.0 / 255.0).epsilon(1e-7));
  CHECK(img.at(1, 1) == doctest::Approx(64.0 / 255.0).epsilon(1e-7));
}

TEST_CASE("load, save, load keeps the pixel grid and the encoder is canonical") {
  TempDir dir("imageio");
  std::mt19937_64 rng(3);
  for (std::size_t c : {1u, 3u}) {
    const ImageBuffer src = random_buffer(7, 5, c, rng);
    save_image(src, dir / "first.png");
    const ImageBuffer once = load_image(dir / "first.png");
    CHECK(once == src);
    save_image(once, dir / "second.png");
    CHECK(load_image(dir / "second.png") == src);
    CHECK(testing::read_bytes(dir / "first.png") == testing::read_bytes(dir / "second.png"));
  }
  const ImageBuffer gray = random_buffer(4, 6, 1, rng);
  save_pgm(gray, dir / "g.pgm");
  save_image(load_image(dir / "g.pgm"), dir / "g.png");
  CHECK(load_image(dir / "g.png") == gray);
}

TEST_CASE("load errors carry distinct codes") {
  TempDir dir("imageio");
  CHECK(load_error(dir / "absent.png") == ImageErrc::missing_file);

  testing::write_bytes(dir / "short.pgm", pgm(4, 4, "abc"));
  CHECK(load_error(dir / "short.pgm") == ImageErrc::corrupt_payload);

  testing::write_bytes(dir / "header.pgm", "P5\n4 x\n255\n");
  CHECK(load_error(dir / "header.pgm") == ImageErrc::corrupt_header);

  testing::write_bytes(dir / "deep.pgm", pgm(1, 1, "\x01\x02", 65535));
  CHECK(load_error(dir / "deep.pgm") == ImageErrc::unsupported_bit_depth);

  testing::write_bytes(dir / "ascii.pgm", "P2\n1 1\n255\n7\n");
  CHECK(load_error(dir / "ascii.pgm") == ImageErrc::unsupported_format);

  testing::write_bytes(dir / "junk.png", "not an image at all");
  CHECK(load_error(dir / "junk.png") == ImageErrc::corrupt_header);
}

TEST_CASE("normalize is the affine map 2v - 1") {
  ImageBuffer img(1, 3, 1, std::vector<float>{0.5f, 0.0f, 1.0f});
  const auto n = normalize(img);
  CHECK(n.grid()(0, 0) == 0.0f);
  CHECK(n.grid()(0, 1) == -1.0f);
  CHECK(n.grid()(0, 2) == 1.0f);

  const auto flat = normalize(ImageBuffer(3, 3, 1, 0.25f));
  for (float v : flat.grid().storage()) CHECK(v == -0.5f);

  CHECK_THROWS_AS(normalize(ImageBuffer(2, 2, 3, 0.5f)), InvalidArgument);
}

TEST_CASE("normalize and denormalize are inverse to 1e-7") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  std::vector<float> px(400);
  for (auto& v : px) v = d(rng);
  const ImageBuffer img(20, 20, 1, px);
  const ImageBuffer back = denormalize(normalize(img));
  for (std::size_t i = 0; i < px.size(); ++i) CHECK(std::abs(back.pixels()[i] - px[i]) < 1e-7);
}

TEST_CASE("normalized values outside [-1,1] are rejected") {
  CHECK_THROWS_AS(NormalizedImage(Grid<float>(2, 2, 1.5f)), InvalidArgument);
  CHECK_THROWS_AS(ImageBuffer(1, 1, 1, std::vector<float>{-0.1f}), InvalidArgument);
}

TEST_CASE("luma/chroma split") {
  SUBCASE("grayscale passes through") {
    std::mt19937_64 rng(5);
    const ImageBuffer g = random_buffer(4, 4, 1, rng);
    const LumaChroma lc = to_luma_chroma(g);
    CHECK_FALSE(lc.chroma.has_value());
    CHECK(lc.luma == normalize(g));
  }
  SUBCASE("achromatic RGB has zero chroma") {
    const float v = 0.3f;
    const LumaChroma lc = to_luma_chroma(ImageBuffer(2, 3, 3, v));
    REQUIRE(lc.chroma.has_value());
    for (float y : lc.luma.grid().storage()) CHECK(y == doctest::Approx(2 * v - 1).epsilon(1e-6));
    for (float c : lc.chroma->cb.storage()) CHECK(std::abs(c) < 1e-6);
    for (float c : lc.chroma->cr.storage()) CHECK(std::abs(c) < 1e-6);
  }
  SUBCASE("random 8-bit RGB round-trips within 1/255") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
      const ImageBuffer img = random_buffer(9, 7, 3, rng);
      const ImageBuffer back = from_luma_chroma(to_luma_chroma(img));
      REQUIRE(back.channels() == 3);
      for (std::size_t i = 0; i < img.pixels().size(); ++i)
        CHECK(std::abs(back.pixels()[i] - img.pixels()[i]) <= 1.0f / 255.0f);
      CHECK(back.to_bytes() == img.to_bytes());
    }
  }
}

TEST_CASE("reflect padding to a patch multiple") {
  std::mt19937_64 rng(23);
  SUBCASE("already a multiple") {
    const NormalizedImage img(testing::uniform_grid<float>(16, 16, rng));
    const PaddedImage p = pad_to_multiple(img, 4);
    CHECK(p.image == img);
    CHECK(p.original.height == 16);
  }
  SUBCASE("17x16 with p = 4") {
    const NormalizedImage img(testing::uniform_grid<float>(17, 16, rng));
    const PaddedImage p = pad_to_multiple(img, 4);
    REQUIRE(p.image.height() == 20);
    REQUIRE(p.image.width() == 16);
    // Rows past the edge mirror the rows before it without repeating the edge row.
    for (std::size_t k = 1; k <= 3; ++k)
      for (std::size_t c = 0; c < 16; ++c) CHECK(p.image.grid()(16 + k, c) == img.grid()(16 - k, c));
    CHECK(crop(p.image, p.original) == img);
  }
  SUBCASE("crop inverts pad for assorted extents") {
    for (std::size_t h : {1u, 3u, 5u, 9u})
      for (std::size_t w : {2u, 7u, 8u}) {
        const NormalizedImage img(testing::uniform_grid<float>(h, w, rng));
        const PaddedImage p = pad_to_multiple(img, 4);
        CHECK(p.image.height() % 4 == 0);
        CHECK(p.image.width() % 4 == 0);
        CHECK(crop(p.image, p.original) == img);
      }
  }
  CHECK(reflect_index(-1, 5) == 1);
  CHECK(reflect_index(5, 5) == 3);
  CHECK(reflect_index(12, 5) == 4);
  CHECK(reflect_index(3, 1) == 0);
  CHECK_THROWS_AS(pad_to_multiple(NormalizedImage(Grid<float>(2, 2)), 0), InvalidArgument);
}
