#pragma once

#include <filesystem>

#include "freqgrl/tensor.hpp"

namespace freqgrl {

// Images are [C,H,W] tensors with values in [0,1], C = 1 or 3. Writing clamps
// and rounds to 8 bits.

/// Reads PNG, PPM (P6) or PGM (P5) by extension. Grayscale and alpha inputs
/// are converted to `channels` (1 or 3).
Tensor read_image(const std::filesystem::path& path, std::size_t channels = 3);
/// Writes PNG, PPM or PGM by extension.
void write_image(const std::filesystem::path& path, const Tensor& image);

void write_png(const std::filesystem::path& path, const Tensor& image);
Tensor read_png(const std::filesystem::path& path, std::size_t channels = 3);
void write_pnm(const std::filesystem::path& path, const Tensor& image);
Tensor read_pnm(const std::filesystem::path& path, std::size_t channels = 3);

/// Rounds values to the nearest 8-bit level after clamping to [0,1].
Tensor quantize8(const Tensor& image);

/// Renders a [H,W] grid as grayscale, min-max scaled to [0,1] first.
Tensor grid_to_image(std::span<const Real> grid, std::size_t h, std::size_t w);

}  // namespace freqgrl
