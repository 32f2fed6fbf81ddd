#pragma once

#include <cassert>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "flexfuse/error.hpp"

namespace flexfuse {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& s);

/// Row-major dense tensor; rank 1-3 in practice.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) throw InvalidArgument("tensor data does not match shape");
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }

  // 2-D conveniences.
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.size() > 1 ? shape_[1] : 1; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  T operator[](std::size_t i) const noexcept { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  T operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  Tensor zeros_like() const { return Tensor(shape_); }

  template <std::floating_point U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  Tensor& operator+=(const Tensor& o) {
    assert(o.size() == size());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <std::floating_point T>
void require_shape(const Tensor<T>& t, const Shape& expected, const char* what) {
  if (t.shape() != expected)
    throw InvalidArgument(std::string(what) + ": expected shape " + shape_string(expected) + ", got " +
                          shape_string(t.shape()));
}

}  // namespace flexfuse
