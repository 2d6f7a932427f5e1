#pragma once

// Forward and vector-Jacobian kernels on plain tensors. The autograd layer
// wraps these; parameter-free modules (prior mask generation) call them
// directly without a tape.

#include <cstddef>
#include <span>
#include <vector>

#include "symnet/tensor.hpp"

namespace symnet::kernels {

// Zero-padded sliding mean over an odd d_h x d_w window, stride 1. The
// divisor is always d_h * d_w, padded cells included.
template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, std::size_t dh, std::size_t dw);
template <typename T>
Tensor<T> avg_pool_backward(const Tensor<T>& gy, std::size_t dh, std::size_t dw);

// Adaptive average pooling to (oh, ow); cell (i, j) averages rows
// [floor(i*H/oh), ceil((i+1)*H/oh)) and likewise for columns.
template <typename T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& x, std::size_t oh, std::size_t ow);
template <typename T>
Tensor<T> adaptive_avg_pool_backward(const Tensor<T>& gy, std::size_t h, std::size_t w);

// Bilinear sampling with half-pixel centres (align_corners = false). Accepts
// H x W or H x W x C.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t oh, std::size_t ow);
template <typename T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& gy, const Shape& in_shape);

template <typename T>
T dot(std::span<const T> a, std::span<const T> b);
template <typename T>
T l2_norm(std::span<const T> a);

// dot / (|a| |b|); 0 when either norm is below eps_norm.
template <typename T>
T cosine(std::span<const T> a, std::span<const T> b);

// (x - min) / (max - min); all zeros when the range is below eps_norm.
template <typename T>
Tensor<T> minmax_normalize(const Tensor<T>& x);

// Max-shifted softmax over a flat vector.
template <typename T>
std::vector<T> softmax(std::span<const T> x);

// Stride-1 cross-correlation with (k-1)/2 zero padding. Kernel layout is
// k x k x C_in x C_out; bias has C_out entries.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias);

template <typename T>
struct Conv2dGrads {
  Tensor<T> dx;
  Tensor<T> dkernel;
  Tensor<T> dbias;
};
template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel,
                               const Tensor<T>& gy, bool need_dx);

// Row-major 2-D product, Eigen-backed.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a = false,
                 bool transpose_b = false);

// H x W x C -> H/f x W/f x C*f*f; channel order (dy, dx, c).
template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& x, std::size_t f);
template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& x, std::size_t f);

template <typename T>
Tensor<T> binarize(const Tensor<T>& x, T threshold);

template <typename T>
bool is_binary(const Tensor<T>& m);

}  // namespace symnet::kernels
