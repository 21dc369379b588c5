#pragma once

#include <filesystem>

#include "capg/numerics.hpp"

namespace capg {

/// Writes an 8-bit binary PGM, min-max normalized per map (a constant map is
/// all zeros), plus "<path>.json" holding the raw min and max.
void export_heatmap(const Grid2D& heat, const std::filesystem::path& path);

/// Reads a binary (P5, maxval <= 255) PGM; values are the raw gray levels.
Grid2D read_pgm(const std::filesystem::path& path);

/// Gray level export_heatmap assigns to value v of a map spanning [lo, hi].
unsigned char quantize(double v, double lo, double hi) noexcept;

}  // namespace capg
