#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "capg/numerics.hpp"

namespace capg {

/// Normalized rectangle in [0,1]^2 with a score and an optional class id.
/// The class id lives in whatever label space the caller uses (a word index
/// for the model, a label-table index for evaluation).
struct Box {
  double xmin = 0.0;
  double ymin = 0.0;
  double xmax = 1.0;
  double ymax = 1.0;
  double score = 0.0;
  std::optional<int> class_id;

  double width() const noexcept { return xmax - xmin; }
  double height() const noexcept { return ymax - ymin; }
  double area() const noexcept { return width() > 0 && height() > 0 ? width() * height() : 0.0; }

  bool operator==(const Box&) const = default;
};

/// Clamps coordinates to [0,1] and throws InvalidRect unless xmin < xmax and
/// ymin < ymax afterwards.
Box make_box(double xmin, double ymin, double xmax, double ymax, double score = 0.0,
             std::optional<int> class_id = std::nullopt);

/// Intersection over union; 0 when the union is empty.
double iou(const Box& a, const Box& b) noexcept;

/// Maps a normalized box onto a rows x cols raster. Edges are rounded to the
/// nearest pixel boundary and the result is at least one pixel on each axis.
PixelRect to_pixel_rect(const Box& box, std::size_t rows, std::size_t cols);

/// Normalized position of the centre of feature cell i on an n-cell axis.
/// Matches corner-aligned resizing: i / (n - 1), or 0.5 when n == 1.
double cell_center(std::size_t i, std::size_t n);

/// Normalized boundary k in [0, n] between cells k-1 and k: the midpoint of
/// their centres, clamped to [0, 1] at the two ends.
double cell_boundary(std::size_t k, std::size_t n);

/// Stable order by descending score (input order among equal scores).
std::vector<std::size_t> order_by_score(const std::vector<Box>& boxes);

}  // namespace capg
