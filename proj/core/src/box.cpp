#include "capg/box.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "capg/error.hpp"

namespace capg {

Box make_box(double xmin, double ymin, double xmax, double ymax, double score,
             std::optional<int> class_id) {
  Box b{std::clamp(xmin, 0.0, 1.0), std::clamp(ymin, 0.0, 1.0), std::clamp(xmax, 0.0, 1.0),
        std::clamp(ymax, 0.0, 1.0), score, class_id};
  if (!(b.xmin < b.xmax) || !(b.ymin < b.ymax)) {
    throw InvalidRect("degenerate box [" + std::to_string(xmin) + "," + std::to_string(ymin) +
                      "," + std::to_string(xmax) + "," + std::to_string(ymax) + "]");
  }
  return b;
}

double iou(const Box& a, const Box& b) noexcept {
  const double ix = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
  const double iy = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

namespace {

std::pair<int, int> pixel_span(double lo, double hi, std::size_t extent) {
  const int n = static_cast<int>(extent);
  int p0 = std::clamp(static_cast<int>(std::lround(lo * n)), 0, n);
  int p1 = std::clamp(static_cast<int>(std::lround(hi * n)), 0, n);
  if (p1 <= p0) {
    p1 = std::min(p0 + 1, n);
    p0 = p1 - 1;
  }
  return {p0, p1};
}

}  // namespace

PixelRect to_pixel_rect(const Box& box, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw InvalidRect("to_pixel_rect: empty raster");
  if (!(box.xmin < box.xmax) || !(box.ymin < box.ymax)) throw InvalidRect("degenerate box");
  const auto [c0, c1] = pixel_span(box.xmin, box.xmax, cols);
  const auto [r0, r1] = pixel_span(box.ymin, box.ymax, rows);
  return {r0, c0, r1, c1};
}

double cell_center(std::size_t i, std::size_t n) {
  if (n <= 1) return 0.5;
  return static_cast<double>(i) / static_cast<double>(n - 1);
}

double cell_boundary(std::size_t k, std::size_t n) {
  if (k == 0) return 0.0;
  if (k >= n) return 1.0;
  return 0.5 * (cell_center(k - 1, n) + cell_center(k, n));
}

std::vector<std::size_t> order_by_score(const std::vector<Box>& boxes) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return boxes[a].score > boxes[b].score; });
  return order;
}

}  // namespace capg
