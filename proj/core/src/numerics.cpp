#include "capg/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "capg/error.hpp"

namespace capg {

namespace {

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidArgument(std::string(what) + ": non-finite value");
  }
}

}  // namespace

Grid2D::Grid2D(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Grid2D::Grid2D(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("Grid2D: data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows_) + "x" + std::to_string(cols_));
  }
  require_finite(data_, "Grid2D");
}

double Grid2D::sum() const noexcept { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Grid2D::min() const {
  if (data_.empty()) throw InvalidArgument("Grid2D::min on empty grid");
  return *std::min_element(data_.begin(), data_.end());
}

double Grid2D::max() const {
  if (data_.empty()) throw InvalidArgument("Grid2D::max on empty grid");
  return *std::max_element(data_.begin(), data_.end());
}

Grid3D::Grid3D(std::size_t rows, std::size_t cols, std::size_t channels, double fill)
    : rows_(rows), cols_(cols), channels_(channels), data_(rows * cols * channels, fill) {}

Grid3D::Grid3D(std::size_t rows, std::size_t cols, std::size_t channels, std::vector<double> data)
    : rows_(rows), cols_(cols), channels_(channels), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_ * channels_) {
    throw ShapeError("Grid3D: data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows_) + "x" + std::to_string(cols_) + "x" +
                     std::to_string(channels_));
  }
  require_finite(data_, "Grid3D");
}

IntegralImage::IntegralImage(const Grid2D& src)
    : rows_(src.rows()), cols_(src.cols()), table_((src.rows() + 1) * (src.cols() + 1), 0.0) {
  const std::size_t stride = cols_ + 1;
  for (std::size_t r = 0; r < rows_; ++r) {
    double row_sum = 0.0;
    for (std::size_t c = 0; c < cols_; ++c) {
      row_sum += src(r, c);
      table_[(r + 1) * stride + c + 1] = table_[r * stride + c + 1] + row_sum;
    }
  }
}

bool IntegralImage::contains(const PixelRect& rect) const noexcept {
  return rect.row0 >= 0 && rect.col0 >= 0 && rect.row0 <= rect.row1 && rect.col0 <= rect.col1 &&
         static_cast<std::size_t>(rect.row1) <= rows_ &&
         static_cast<std::size_t>(rect.col1) <= cols_;
}

double IntegralImage::rect_sum(const PixelRect& rect) const {
  if (!contains(rect)) {
    throw InvalidRect("rect [" + std::to_string(rect.row0) + "," + std::to_string(rect.row1) +
                      ")x[" + std::to_string(rect.col0) + "," + std::to_string(rect.col1) +
                      ") outside " + std::to_string(rows_) + "x" + std::to_string(cols_));
  }
  const auto r0 = static_cast<std::size_t>(rect.row0);
  const auto r1 = static_cast<std::size_t>(rect.row1);
  const auto c0 = static_cast<std::size_t>(rect.col0);
  const auto c1 = static_cast<std::size_t>(rect.col1);
  return at(r1, c1) - at(r0, c1) - at(r1, c0) + at(r0, c0);
}

double IntegralImage::rect_mean(const PixelRect& rect) const {
  if (rect.area() == 0) throw InvalidRect("zero-area rectangle");
  return rect_sum(rect) / static_cast<double>(rect.area());
}

std::vector<double> softmax(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("softmax: empty input");
  require_finite(values, "softmax");
  const double peak = *std::max_element(values.begin(), values.end());
  std::vector<double> out(values.size());
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = std::exp(values[i] - peak);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

double dot(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ShapeError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += u[i] * v[i];
  return acc;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ShapeError("cosine: length mismatch");
  const double nu = l2_norm(u);
  const double nv = l2_norm(v);
  if (nu <= kNormEpsilon || nv <= kNormEpsilon) throw DegenerateVector("cosine: near-zero norm");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

double guarded_cosine(std::span<const double> u, std::span<const double> v) {
  return dot(u, v) / ((l2_norm(u) + kNormEpsilon) * (l2_norm(v) + kNormEpsilon));
}

IntegralImage integral(const Grid2D& src) { return IntegralImage(src); }

double rect_mean(const IntegralImage& ii, const PixelRect& rect) { return ii.rect_mean(rect); }

Grid2D resize_bilinear(const Grid2D& src, std::size_t out_rows, std::size_t out_cols) {
  if (src.empty()) throw InvalidArgument("resize_bilinear: empty source");
  if (out_rows == 0 || out_cols == 0) throw InvalidArgument("resize_bilinear: zero target size");

  // Precompute the two source taps and the blend weight per output coordinate.
  struct Tap {
    std::size_t lo, hi;
    double t;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> result(out);
    const double scale = out > 1 ? static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
    for (std::size_t o = 0; o < out; ++o) {
      const double pos = static_cast<double>(o) * scale;
      auto lo = static_cast<std::size_t>(std::floor(pos));
      lo = std::min(lo, in - 1);
      const std::size_t hi = std::min(lo + 1, in - 1);
      result[o] = {lo, hi, pos - static_cast<double>(lo)};
    }
    return result;
  };
  const auto row_taps = taps(src.rows(), out_rows);
  const auto col_taps = taps(src.cols(), out_cols);

  Grid2D out(out_rows, out_cols);
  for (std::size_t r = 0; r < out_rows; ++r) {
    const Tap& rt = row_taps[r];
    for (std::size_t c = 0; c < out_cols; ++c) {
      const Tap& ct = col_taps[c];
      const double top = src(rt.lo, ct.lo) * (1.0 - ct.t) + src(rt.lo, ct.hi) * ct.t;
      const double bottom = src(rt.hi, ct.lo) * (1.0 - ct.t) + src(rt.hi, ct.hi) * ct.t;
      out(r, c) = top * (1.0 - rt.t) + bottom * rt.t;
    }
  }
  return out;
}

std::vector<double> gaussian_kernel(std::size_t kernel_size) {
  if (kernel_size == 0) throw InvalidArgument("gaussian_kernel: size must be >= 1");
  const long radius = static_cast<long>(kernel_size / 2);
  if (radius == 0) return {1.0};
  const double sigma = static_cast<double>(kernel_size) / 6.0;
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double x = static_cast<double>(i);
    const double w = std::exp(-0.5 * x * x / (sigma * sigma));
    taps[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (double& w : taps) w /= total;
  return taps;
}

std::size_t reflect_index(long i, std::size_t n) noexcept {
  // Symmetric reflection (…cba|abc…|cba…) has period 2n.
  const long period = 2 * static_cast<long>(n);
  long m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<long>(n)) m = period - 1 - m;
  return static_cast<std::size_t>(m);
}

Grid2D gaussian_smooth(const Grid2D& src, std::size_t kernel_size) {
  const auto taps = gaussian_kernel(kernel_size);
  if (taps.size() == 1 || src.empty()) return src;
  const long radius = static_cast<long>(taps.size() / 2);
  const std::size_t rows = src.rows();
  const std::size_t cols = src.cols();

  // Horizontal pass, then vertical. Index tables avoid per-sample reflection.
  std::vector<std::size_t> col_index(cols + 2 * static_cast<std::size_t>(radius));
  for (std::size_t j = 0; j < col_index.size(); ++j) {
    col_index[j] = reflect_index(static_cast<long>(j) - radius, cols);
  }
  std::vector<std::size_t> row_index(rows + 2 * static_cast<std::size_t>(radius));
  for (std::size_t j = 0; j < row_index.size(); ++j) {
    row_index[j] = reflect_index(static_cast<long>(j) - radius, rows);
  }

  Grid2D horizontal(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < taps.size(); ++t) acc += taps[t] * src(r, col_index[c + t]);
      horizontal(r, c) = acc;
    }
  }
  Grid2D out(rows, cols);
  std::vector<double> acc(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t t = 0; t < taps.size(); ++t) {
      const std::size_t sr = row_index[r + t];
      const double w = taps[t];
      for (std::size_t c = 0; c < cols; ++c) acc[c] += w * horizontal(sr, c);
    }
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = acc[c];
  }
  return out;
}

}  // namespace capg
