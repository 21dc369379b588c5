#pragma once

// Dense 2D/3D grids and the handful of kernels the model needs: softmax,
// cosine similarity, summed-area tables, bilinear resize, Gaussian smoothing.

#include <cstddef>
#include <span>
#include <vector>

namespace capg {

/// Row-major real grid.
class Grid2D {
 public:
  Grid2D() = default;
  Grid2D(std::size_t rows, std::size_t cols, double fill = 0.0);
  Grid2D(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  double sum() const noexcept;
  double min() const;
  double max() const;

  bool operator==(const Grid2D&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// rows x cols x channels grid, channel-fastest. Each (row, col) cell is one
/// region feature vector.
class Grid3D {
 public:
  Grid3D() = default;
  Grid3D(std::size_t rows, std::size_t cols, std::size_t channels, double fill = 0.0);
  Grid3D(std::size_t rows, std::size_t cols, std::size_t channels, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t cell_count() const noexcept { return rows_ * cols_; }

  double& operator()(std::size_t r, std::size_t c, std::size_t k) {
    return data_[(r * cols_ + c) * channels_ + k];
  }
  double operator()(std::size_t r, std::size_t c, std::size_t k) const {
    return data_[(r * cols_ + c) * channels_ + k];
  }

  /// Feature vector of flat cell index i = r * cols + c.
  std::span<double> cell(std::size_t i) { return {data_.data() + i * channels_, channels_}; }
  std::span<const double> cell(std::size_t i) const {
    return {data_.data() + i * channels_, channels_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool operator==(const Grid3D&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

/// Half-open pixel rectangle [row0, row1) x [col0, col1).
struct PixelRect {
  int row0 = 0;
  int col0 = 0;
  int row1 = 0;
  int col1 = 0;

  int height() const noexcept { return row1 - row0; }
  int width() const noexcept { return col1 - col0; }
  long area() const noexcept {
    return height() > 0 && width() > 0 ? static_cast<long>(height()) * width() : 0;
  }
  bool operator==(const PixelRect&) const = default;
};

/// Summed-area table with a zero top row and left column, so
/// sum(rect) = S(r1,c1) - S(r0,c1) - S(r1,c0) + S(r0,c0) without branches.
class IntegralImage {
 public:
  IntegralImage() = default;
  explicit IntegralImage(const Grid2D& src);

  /// Dimensions of the source grid (the table itself is one larger per axis).
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double at(std::size_t r, std::size_t c) const { return table_[r * (cols_ + 1) + c]; }

  /// Throws InvalidRect if the rectangle is out of bounds; empty rects sum to 0.
  double rect_sum(const PixelRect& rect) const;
  /// Throws InvalidRect on zero area or out of bounds.
  double rect_mean(const PixelRect& rect) const;

  bool contains(const PixelRect& rect) const noexcept;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> table_;
};

inline constexpr double kNormEpsilon = 1e-12;

/// Max-shifted softmax. Throws InvalidArgument on empty or non-finite input.
std::vector<double> softmax(std::span<const double> values);

double dot(std::span<const double> u, std::span<const double> v);
double l2_norm(std::span<const double> v);

/// Strict cosine similarity; throws DegenerateVector when either norm <= 1e-12
/// and ShapeError on a length mismatch.
double cosine(std::span<const double> u, std::span<const double> v);

/// Cosine with the epsilon folded into the norms: <u,v> / ((|u|+eps)(|v|+eps)).
/// Never throws on zero vectors (returns 0).
double guarded_cosine(std::span<const double> u, std::span<const double> v);

IntegralImage integral(const Grid2D& src);
double rect_mean(const IntegralImage& ii, const PixelRect& rect);

/// Corner-aligned bilinear resize: output pixel (0,0) samples input (0,0) and
/// the last output pixel samples the last input pixel.
Grid2D resize_bilinear(const Grid2D& src, std::size_t out_rows, std::size_t out_cols);

/// Normalized Gaussian taps for a kernel size k: radius k/2 (integer
/// division), sigma = k/6. k = 1 yields the single tap {1}.
std::vector<double> gaussian_kernel(std::size_t kernel_size);

/// Separable Gaussian blur with symmetric (edge-duplicating) reflection.
Grid2D gaussian_smooth(const Grid2D& src, std::size_t kernel_size);

/// Maps an out-of-range index into [0, n) by repeated symmetric reflection.
std::size_t reflect_index(long i, std::size_t n) noexcept;

}  // namespace capg
