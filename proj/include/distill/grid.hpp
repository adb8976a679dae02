#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "distill/error.hpp"

namespace distill {

/// Dense row-major 2-D grid.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, T fill = T{}) : height_(height), width_(width) {
    if (height <= 0 || width <= 0) {
      throw ShapeError("grid dimensions must be positive, got " + std::to_string(height) + "x" +
                       std::to_string(width));
    }
    values_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
  }
  Grid(int height, int width, std::vector<T> values) : Grid(height, width) {
    if (values.size() != values_.size()) {
      throw ShapeError("grid value count does not match dimensions");
    }
    values_ = std::move(values);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  T& operator()(int y, int x) { return values_[index(y, x)]; }
  const T& operator()(int y, int x) const { return values_[index(y, x)]; }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  std::vector<T>& storage() { return values_; }
  const std::vector<T>& storage() const { return values_; }

  bool same_shape(const Grid& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }
  template <typename U>
  bool same_shape(const Grid<U>& other) const {
    return height_ == other.height() && width_ == other.width();
  }

  bool operator==(const Grid&) const = default;

 private:
  std::size_t index(int y, int x) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> values_;
};

/// Grayscale intensities in [0,1].
using Image = Grid<float>;

/// Binary per-pixel supervision mask.
using GtMask = Grid<std::uint8_t>;

/// Per-pixel probabilities in [0,1]. Construction validates the range.
class ProbabilityMap : public Grid<float> {
 public:
  ProbabilityMap() = default;
  ProbabilityMap(int height, int width, float fill = 0.0f);
  ProbabilityMap(int height, int width, std::vector<float> values);
  explicit ProbabilityMap(Grid<float> grid);

  /// Throws DomainError if any value is outside [0,1] or not finite.
  void validate() const;
};

template <typename A, typename B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()));
  }
}

}  // namespace distill
