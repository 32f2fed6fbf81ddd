#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "flexfuse/grid.hpp"

namespace flexfuse {

/// 8-bit-origin raster with values in [0,1]. Pixels are stored interleaved
/// (row, col, channel).
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(std::size_t height, std::size_t width, std::size_t channels, float fill = 0.0f);
  ImageBuffer(std::size_t height, std::size_t width, std::size_t channels, std::vector<float> pixels);

  static ImageBuffer from_bytes(std::size_t height, std::size_t width, std::size_t channels,
                                std::span<const std::uint8_t> bytes);
  static ImageBuffer from_grid(const Grid<float>& g);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }

  float& at(std::size_t r, std::size_t c, std::size_t ch = 0) noexcept {
    return pixels_[(r * width_ + c) * channels_ + ch];
  }
  float at(std::size_t r, std::size_t c, std::size_t ch = 0) const noexcept {
    return pixels_[(r * width_ + c) * channels_ + ch];
  }

  std::span<const float> pixels() const noexcept { return pixels_; }
  std::span<float> pixels() noexcept { return pixels_; }

  /// Quantizes to bytes with round-to-nearest; values are clamped to [0,1].
  std::vector<std::uint8_t> to_bytes() const;

  /// Single-channel images only.
  Grid<float> to_grid() const;

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<float> pixels_;
};

/// Single-channel grid in [-1,1], the representation the diffusion model and
/// the EM correction operate on.
class NormalizedImage {
 public:
  NormalizedImage() = default;
  explicit NormalizedImage(Grid<float> g);

  std::size_t height() const noexcept { return grid_.rows(); }
  std::size_t width() const noexcept { return grid_.cols(); }
  const Grid<float>& grid() const noexcept { return grid_; }

  friend bool operator==(const NormalizedImage&, const NormalizedImage&) = default;

 private:
  Grid<float> grid_;
};

/// BT.601 chroma offsets (Cb, Cr), in the same [0,1]-scaled units as luma.
struct Chroma {
  Grid<float> cb;
  Grid<float> cr;
};

struct LumaChroma {
  NormalizedImage luma;
  std::optional<Chroma> chroma;
};

/// Extent of an image before pad_to_multiple, used to crop results back.
struct PadRecord {
  std::size_t height = 0;
  std::size_t width = 0;
};

struct PaddedImage {
  NormalizedImage image;
  PadRecord original;
};

/// Reads binary PGM (P5, maxval 255) or 8-bit PNG (gray or RGB, no alpha).
ImageBuffer load_image(const std::filesystem::path& path);

/// Always writes PNG, regardless of the extension.
void save_image(const ImageBuffer& img, const std::filesystem::path& path);

/// Writes binary P5 PGM. Single-channel only. Used by tests and corpus dumps.
void save_pgm(const ImageBuffer& img, const std::filesystem::path& path);

NormalizedImage normalize(const ImageBuffer& img);
ImageBuffer denormalize(const NormalizedImage& img);

LumaChroma to_luma_chroma(const ImageBuffer& img);
ImageBuffer from_luma_chroma(const LumaChroma& lc);

PaddedImage pad_to_multiple(const NormalizedImage& img, std::size_t patch);

template <std::floating_point T>
Grid<T> crop(const Grid<T>& g, const PadRecord& extent) {
  Grid<T> out(extent.height, extent.width);
  for (std::size_t r = 0; r < extent.height; ++r)
    for (std::size_t c = 0; c < extent.width; ++c) out(r, c) = g(r, c);
  return out;
}

NormalizedImage crop(const NormalizedImage& img, const PadRecord& extent);

/// Mirror index for reflect padding ("reflect" mode: the edge sample is not
/// repeated). Works for offsets larger than the extent by folding repeatedly.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) noexcept;

}  // namespace flexfuse
