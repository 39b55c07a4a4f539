#pragma once

#include <filesystem>

#include "r2n2/field.hpp"

namespace r2n2 {

// Displacement field container "R2NF": magic "R2NF", u32 height, u32 width
// (little-endian), then H*W float32 u values and H*W float32 v values,
// row-major.
void save_field(const DisplacementField& f, const std::filesystem::path& path);
DisplacementField load_field(const std::filesystem::path& path);

// Binary PGM (P5), 8- or 16-bit; intensities map linearly to [0,1].
void save_pgm(const Image2D& img, const std::filesystem::path& path, int bits = 16);
Image2D load_pgm(const std::filesystem::path& path);

}  // namespace r2n2
