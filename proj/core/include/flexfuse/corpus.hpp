#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "flexfuse/grid.hpp"

namespace flexfuse {

/// Seeded synthetic training images in [-1,1]: smooth ramps, Gaussian blobs
/// and step edges, mixed per image.
std::vector<Grid<float>> synthetic_corpus(std::size_t count, std::size_t size, std::uint64_t seed);

/// Loads every PGM/PNG in `dir` (sorted by name) as normalized luma.
/// Throws when the directory is missing, unreadable or holds no images.
std::vector<Grid<float>> load_dataset(const std::filesystem::path& dir);

}  // namespace flexfuse
