#pragma once

#include <utility>

#include "capg/numerics.hpp"

namespace capg {

/// Per-class heat map over the image raster with its summed-area table.
/// The integral image is rebuilt whenever the heat map is replaced.
class ActivationMap {
 public:
  ActivationMap() = default;
  ActivationMap(int class_word, Grid2D heat)
      : class_word_(class_word), heat_(std::move(heat)), integral_(heat_) {}

  int class_word() const noexcept { return class_word_; }
  const Grid2D& heat() const noexcept { return heat_; }
  const IntegralImage& integral() const noexcept { return integral_; }
  std::size_t rows() const noexcept { return heat_.rows(); }
  std::size_t cols() const noexcept { return heat_.cols(); }

  void set_heat(Grid2D heat) {
    heat_ = std::move(heat);
    integral_ = IntegralImage(heat_);
  }

 private:
  int class_word_ = -1;
  Grid2D heat_;
  IntegralImage integral_;
};

}  // namespace capg
