#pragma once

#include <filesystem>
#include <string_view>

#include "pseudocam/tensor.hpp"

namespace pseudocam {

// Reads an 8-bit PGM/PPM (P2, P3, P5 or P6) into a [C, H, W] tensor with
// values v / maxval in [0, 1]. C is 1 for graymaps and 3 for pixmaps.
Tensor read_pnm(const std::filesystem::path& path);

// Writes a raw P5 (C = 1) or P6 (C = 3) file with round(255 * v) samples.
// A non-empty comment goes into the header as a '#' line.
void write_pnm(const std::filesystem::path& path, const Tensor& patch, std::string_view comment = {});

// Rounds every value to the nearest k / 255 so that a write/read cycle is
// lossless.
void quantize_8bit(Tensor& patch);

}  // namespace pseudocam
