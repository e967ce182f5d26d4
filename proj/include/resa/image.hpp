#pragma once

// 8-bit RGB PNG input/output for (3, H, W) float images in [0, 1].

#include <array>
#include <filesystem>

#include "resa/tensor.hpp"

namespace resa {

using Rgb = std::array<float, 3>;

/// Values are clamped to [0,1] and rounded to 8 bits.
void write_png(const std::filesystem::path& path, const Tensor<float>& image);
/// Grayscale and alpha inputs are expanded/dropped to RGB. Throws DataError.
Tensor<float> read_png(const std::filesystem::path& path);

/// Rounds every value to the nearest multiple of 1/255 so a PNG round trip is exact.
void quantize_8bit(Tensor<float>& image);

/// Paints `rgb` at pixel (y, x) blended by alpha; out-of-range pixels are ignored.
void blend_pixel(Tensor<float>& image, Index y, Index x, const Rgb& rgb, float alpha = 1.0f);

}  // namespace resa
