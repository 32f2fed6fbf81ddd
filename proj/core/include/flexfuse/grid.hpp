#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <vector>

namespace flexfuse {

/// Dense row-major 2-D array. The workhorse value type for images, EM
/// fields and noise draws.
template <std::floating_point T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Grid(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    assert(data_.size() == rows_ * cols_);
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  T operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  bool same_shape(const Grid& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  template <std::floating_point U>
  Grid<U> cast() const {
    Grid<U> out(rows_, cols_);
    std::transform(data_.begin(), data_.end(), out.storage().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Field = Grid<double>;

template <std::floating_point T>
bool all_finite(const Grid<T>& g) {
  return std::all_of(g.storage().begin(), g.storage().end(),
                     [](T v) { return std::isfinite(v); });
}

template <std::floating_point T>
double l2_norm(const Grid<T>& g) {
  double s = 0.0;
  for (T v : g.storage()) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

}  // namespace flexfuse
