#include "flexfuse/imageio.hpp"

#include <png.h>

#include <array>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "flexfuse/error.hpp"

namespace flexfuse {

namespace {

constexpr std::array<std::uint8_t, 8> kPngSignature = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec))
    throw ImageError(ImageErrc::missing_file, "image not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError(ImageErrc::missing_file, "cannot open image: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Header tokens of a netpbm file: skips whitespace and '#' comments.
class PgmHeaderReader {
 public:
  PgmHeaderReader(const std::vector<std::uint8_t>& bytes, const std::string& name)
      : bytes_(bytes), name_(name) {}

  std::size_t next_uint() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_]))
      throw ImageError(ImageErrc::corrupt_header, "malformed PGM header in " + name_);
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > (1u << 30))
        throw ImageError(ImageErrc::corrupt_header, "PGM header value too large in " + name_);
    }
    return v;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
      throw ImageError(ImageErrc::corrupt_header, "malformed PGM header in " + name_);
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  const std::string& name_;
  std::size_t pos_ = 2;
};

ImageBuffer decode_pgm(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  PgmHeaderReader hdr(bytes, name);
  const std::size_t width = hdr.next_uint();
  const std::size_t height = hdr.next_uint();
  const std::size_t maxval = hdr.next_uint();
  if (width == 0 || height == 0)
    throw ImageError(ImageErrc::corrupt_header, "PGM with empty extent: " + name);
  if (maxval != 255)
    throw ImageError(ImageErrc::unsupported_bit_depth,
                     "PGM maxval " + std::to_string(maxval) + " unsupported (need 255): " + name);
  const std::size_t offset = hdr.raster_offset();
  const std::size_t need = width * height;
  if (bytes.size() < offset + need)
    throw ImageError(ImageErrc::corrupt_payload,
                     "PGM payload truncated: expected " + std::to_string(need) + " bytes, got " +
                         std::to_string(bytes.size() - std::min(bytes.size(), offset)) + " in " + name);
  return ImageBuffer::from_bytes(height, width, 1,
                                 std::span(bytes).subspan(offset, need));
}

ImageBuffer decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw ImageError(ImageErrc::corrupt_header, "bad PNG header in " + name + ": " + image.message);

  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    throw ImageError(ImageErrc::unsupported_bit_depth, "16-bit PNG unsupported: " + name);
  }
  if (image.format & PNG_FORMAT_FLAG_ALPHA) {
    png_image_free(&image);
    throw ImageError(ImageErrc::unsupported_format, "PNG with alpha channel unsupported: " + name);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const std::size_t channels = color ? 3 : 1;
  std::vector<std::uint8_t> raster(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raster.data(), 0, nullptr))
    throw ImageError(ImageErrc::corrupt_payload, "corrupt PNG payload in " + name + ": " + image.message);
  return ImageBuffer::from_bytes(image.height, image.width, channels, raster);
}

}  // namespace

ImageBuffer::ImageBuffer(std::size_t height, std::size_t width, std::size_t channels, float fill)
    : height_(height), width_(width), channels_(channels), pixels_(height * width * channels, fill) {
  if (height == 0 || width == 0) throw InvalidArgument("image extent must be positive");
  if (channels != 1 && channels != 3) throw InvalidArgument("image must have 1 or 3 channels");
}

ImageBuffer::ImageBuffer(std::size_t height, std::size_t width, std::size_t channels,
                         std::vector<float> pixels)
    : height_(height), width_(width), channels_(channels), pixels_(std::move(pixels)) {
  if (height == 0 || width == 0) throw InvalidArgument("image extent must be positive");
  if (channels != 1 && channels != 3) throw InvalidArgument("image must have 1 or 3 channels");
  if (pixels_.size() != height * width * channels)
    throw InvalidArgument("pixel count does not match extent");
  for (float v : pixels_)
    if (!(v >= 0.0f && v <= 1.0f)) throw InvalidArgument("pixel outside [0,1]");
}

ImageBuffer ImageBuffer::from_bytes(std::size_t height, std::size_t width, std::size_t channels,
                                    std::span<const std::uint8_t> bytes) {
  ImageBuffer img(height, width, channels);
  if (bytes.size() != img.pixels_.size()) throw InvalidArgument("byte count does not match extent");
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels_[i] = static_cast<float>(bytes[i]) / 255.0f;
  return img;
}

ImageBuffer ImageBuffer::from_grid(const Grid<float>& g) {
  std::vector<float> px(g.storage());
  for (float& v : px) v = std::clamp(v, 0.0f, 1.0f);
  return ImageBuffer(g.rows(), g.cols(), 1, std::move(px));
}

std::vector<std::uint8_t> ImageBuffer::to_bytes() const {
  std::vector<std::uint8_t> out(pixels_.size());
  for (std::size_t i = 0; i < pixels_.size(); ++i) {
    const float v = std::clamp(pixels_[i], 0.0f, 1.0f);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

Grid<float> ImageBuffer::to_grid() const {
  if (channels_ != 1) throw InvalidArgument("to_grid requires a single-channel image");
  return Grid<float>(height_, width_, pixels_);
}

NormalizedImage::NormalizedImage(Grid<float> g) : grid_(std::move(g)) {
  if (grid_.empty()) throw InvalidArgument("normalized image must be non-empty");
  for (float v : grid_.storage())
    if (!(v >= -1.0f && v <= 1.0f)) throw InvalidArgument("normalized value outside [-1,1]");
}

ImageBuffer load_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::string name = path.string();
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes, name);
  if (bytes.size() >= kPngSignature.size() &&
      std::equal(kPngSignature.begin(), kPngSignature.end(), bytes.begin()))
    return decode_png(bytes, name);
  if (bytes.size() >= 2 && bytes[0] == 'P' && std::isdigit(bytes[1]))
    throw ImageError(ImageErrc::unsupported_format, "only binary P5 PGM is supported: " + name);
  throw ImageError(ImageErrc::corrupt_header, "unrecognized image signature: " + name);
}

void save_image(const ImageBuffer& img, const std::filesystem::path& path) {
  const auto bytes = img.to_bytes();
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw ImageError(ImageErrc::write_failed, "cannot write PNG " + path.string() + ": " + image.message);
}

void save_pgm(const ImageBuffer& img, const std::filesystem::path& path) {
  if (img.channels() != 1) throw InvalidArgument("PGM output requires a single-channel image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError(ImageErrc::write_failed, "cannot write PGM " + path.string());
  out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  const auto bytes = img.to_bytes();
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageError(ImageErrc::write_failed, "short write to " + path.string());
}

NormalizedImage normalize(const ImageBuffer& img) {
  if (img.channels() != 1)
    throw InvalidArgument("normalize expects a single-channel image; use to_luma_chroma");
  Grid<float> g(img.height(), img.width());
  const auto px = img.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) g[i] = std::clamp(2.0f * px[i] - 1.0f, -1.0f, 1.0f);
  return NormalizedImage(std::move(g));
}

ImageBuffer denormalize(const NormalizedImage& img) {
  Grid<float> g = img.grid();
  for (float& v : g.storage()) v = std::clamp((v + 1.0f) * 0.5f, 0.0f, 1.0f);
  return ImageBuffer::from_grid(g);
}

LumaChroma to_luma_chroma(const ImageBuffer& img) {
  if (img.channels() == 1) return {normalize(img), std::nullopt};

  const std::size_t h = img.height(), w = img.width();
  Grid<float> y(h, w);
  Chroma chroma{Grid<float>(h, w), Grid<float>(h, w)};
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double R = img.at(r, c, 0), G = img.at(r, c, 1), B = img.at(r, c, 2);
      const double luma = 0.299 * R + 0.587 * G + 0.114 * B;
      y(r, c) = static_cast<float>(std::clamp(2.0 * luma - 1.0, -1.0, 1.0));
      chroma.cb(r, c) = static_cast<float>(-0.168736 * R - 0.331264 * G + 0.5 * B);
      chroma.cr(r, c) = static_cast<float>(0.5 * R - 0.418688 * G - 0.081312 * B);
    }
  }
  return {NormalizedImage(std::move(y)), std::move(chroma)};
}

ImageBuffer from_luma_chroma(const LumaChroma& lc) {
  const auto& y = lc.luma.grid();
  if (!lc.chroma) {
    Grid<float> g = y;
    for (float& v : g.storage()) v = std::clamp((v + 1.0f) * 0.5f, 0.0f, 1.0f);
    return ImageBuffer::from_grid(g);
  }
  const auto& ch = *lc.chroma;
  if (!ch.cb.same_shape(y) || !ch.cr.same_shape(y))
    throw InvalidArgument("luma and chroma extents differ");
  ImageBuffer out(y.rows(), y.cols(), 3);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t c = 0; c < y.cols(); ++c) {
      const double Y = (static_cast<double>(y(r, c)) + 1.0) * 0.5;
      const double Cb = ch.cb(r, c), Cr = ch.cr(r, c);
      const double rgb[3] = {Y + 1.402 * Cr, Y - 0.344136 * Cb - 0.714136 * Cr, Y + 1.772 * Cb};
      for (std::size_t k = 0; k < 3; ++k)
        out.at(r, c, k) = static_cast<float>(std::clamp(rgb[k], 0.0, 1.0));
    }
  }
  return out;
}

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) noexcept {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(n) ? m : period - m);
}

PaddedImage pad_to_multiple(const NormalizedImage& img, std::size_t patch) {
  if (patch == 0) throw InvalidArgument("patch size must be >= 1");
  const std::size_t h = img.height(), w = img.width();
  const std::size_t ph = (h + patch - 1) / patch * patch;
  const std::size_t pw = (w + patch - 1) / patch * patch;
  const PadRecord original{h, w};
  if (ph == h && pw == w) return {img, original};

  const auto& src = img.grid();
  Grid<float> out(ph, pw);
  for (std::size_t r = 0; r < ph; ++r) {
    const std::size_t sr = reflect_index(static_cast<std::ptrdiff_t>(r), h);
    for (std::size_t c = 0; c < pw; ++c)
      out(r, c) = src(sr, reflect_index(static_cast<std::ptrdiff_t>(c), w));
  }
  return {NormalizedImage(std::move(out)), original};
}

NormalizedImage crop(const NormalizedImage& img, const PadRecord& extent) {
  if (extent.height > img.height() || extent.width > img.width())
    throw InvalidArgument("crop extent exceeds image");
  return NormalizedImage(crop(img.grid(), extent));
}

}  // namespace flexfuse
