#include "flexfuse/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "flexfuse/error.hpp"
#include "flexfuse/imageio.hpp"

namespace flexfuse {

std::vector<Grid<float>> synthetic_corpus(std::size_t count, std::size_t size, std::uint64_t seed) {
  if (size == 0) throw InvalidArgument("synthetic corpus image size must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<Grid<float>> out;
  out.reserve(count);
  const double n = static_cast<double>(size);

  for (std::size_t k = 0; k < count; ++k) {
    Grid<double> img(size, size);
    // Smooth ramp.
    const double angle = 2.0 * std::numbers::pi * u01(rng);
    const double slope = 0.8 * u01(rng);
    const double offset = 0.6 * u01(rng) - 0.3;
    for (std::size_t r = 0; r < size; ++r)
      for (std::size_t c = 0; c < size; ++c) {
        const double x = (c + 0.5) / n - 0.5, y = (r + 0.5) / n - 0.5;
        img(r, c) = offset + slope * (std::cos(angle) * x + std::sin(angle) * y);
      }
    // Gaussian blobs.
    const int blobs = 1 + static_cast<int>(u01(rng) * 3.0);
    for (int b = 0; b < blobs; ++b) {
      const double cx = u01(rng) * n, cy = u01(rng) * n;
      const double sigma = (0.08 + 0.2 * u01(rng)) * n;
      const double amp = (u01(rng) < 0.5 ? -1.0 : 1.0) * (0.4 + 0.6 * u01(rng));
      for (std::size_t r = 0; r < size; ++r)
        for (std::size_t c = 0; c < size; ++c) {
          const double dx = c + 0.5 - cx, dy = r + 0.5 - cy;
          img(r, c) += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        }
    }
    // Step edge along a random line, on roughly half the images.
    if (u01(rng) < 0.5) {
      const double a = 2.0 * std::numbers::pi * u01(rng);
      const double d = (u01(rng) - 0.5) * 0.6;
      const double h = 0.3 + 0.5 * u01(rng);
      for (std::size_t r = 0; r < size; ++r)
        for (std::size_t c = 0; c < size; ++c) {
          const double x = (c + 0.5) / n - 0.5, y = (r + 0.5) / n - 0.5;
          if (std::cos(a) * x + std::sin(a) * y > d) img(r, c) += h;
        }
    }
    Grid<float> g(size, size);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(std::clamp(img[i], -1.0, 1.0));
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<Grid<float>> load_dataset(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec))
    throw InvalidArgument("dataset directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png" || ext == ".pgm") files.push_back(entry.path());
  }
  if (ec) throw InvalidArgument("cannot read dataset directory " + dir.string() + ": " + ec.message());
  if (files.empty()) throw InvalidArgument("dataset directory holds no PNG/PGM images: " + dir.string());
  std::sort(files.begin(), files.end());

  std::vector<Grid<float>> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(to_luma_chroma(load_image(f)).luma.grid());
  return out;
}

}  // namespace flexfuse
