#include "symnet/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace symnet {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  if (shape.empty()) return 0;
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  for (auto e : shape_) require(e > 0, "tensor extents must be positive: " + shape_str(shape_));
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto e : shape_) require(e > 0, "tensor extents must be positive: " + shape_str(shape_));
  require(shape_numel(shape_) == data_.size(),
          "tensor data length does not match shape " + shape_str(shape_));
}

template <typename T>
T Tensor<T>::item() const {
  require(data_.size() == 1, "item() on non-scalar tensor " + shape_str(shape_));
  return data_[0];
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  require(shape_numel(shape) == data_.size(),
          "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](T v) { return std::isfinite(v); });
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* where) {
  if (!t.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + where);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void check_finite(const Tensor<float>&, const char*);
template void check_finite(const Tensor<double>&, const char*);

}  // namespace symnet
