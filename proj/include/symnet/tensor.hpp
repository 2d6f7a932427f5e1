#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "symnet/error.hpp"

namespace symnet {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Guard used for every norm / range division.
template <typename T>
constexpr T eps_norm() {
  if constexpr (std::is_same_v<T, float>) {
    return T(1e-6);
  } else {
    return T(1e-8);
  }
}

// Dense row-major array. Spatial tensors are laid out H x W x C so the
// channel vector of one position is contiguous.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }
  static Tensor vector(std::vector<T> v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t y, std::size_t x) { return data_[y * shape_[1] + x]; }
  const T& at(std::size_t y, std::size_t x) const {
    return data_[y * shape_[1] + x];
  }
  T& at(std::size_t y, std::size_t x, std::size_t c) {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }
  const T& at(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }

  T item() const;
  void fill(T v);
  Tensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

// Raises NumericError naming `where` when any value is NaN or infinite.
template <typename T>
void check_finite(const Tensor<T>& t, const char* where);

// Helpers for spatial tensors.
template <typename T>
std::size_t height(const Tensor<T>& t) { return t.dim(0); }
template <typename T>
std::size_t width(const Tensor<T>& t) { return t.dim(1); }
template <typename T>
std::size_t channels(const Tensor<T>& t) { return t.rank() == 3 ? t.dim(2) : 1; }

}  // namespace symnet
