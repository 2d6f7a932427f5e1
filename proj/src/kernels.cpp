#include "symnet/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace symnet::kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;

template <typename T>
void require_spatial(const Tensor<T>& x, const char* op) {
  require(!x.empty(), std::string(op) + ": empty tensor");
  require(x.rank() == 3, std::string(op) + ": expected H x W x C, got " + shape_str(x.shape()));
}

struct Sample {
  std::size_t i0, i1;
  double w1;
};

// Half-pixel source coordinate for one output index.
Sample source_index(std::size_t out_i, std::size_t in_n, std::size_t out_n) {
  double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
  double src = (static_cast<double>(out_i) + 0.5) * scale - 0.5;
  if (src < 0) src = 0;
  auto i0 = static_cast<std::size_t>(std::floor(src));
  if (i0 > in_n - 1) i0 = in_n - 1;
  std::size_t i1 = std::min(i0 + 1, in_n - 1);
  return {i0, i1, src - static_cast<double>(i0)};
}

template <typename T>
void im2col(const Tensor<T>& x, std::size_t k, RowMat<T>& col) {
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const auto pad = static_cast<long>(k / 2);
  col.setZero(static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(k * k * c));
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      T* row = col.data() + (y * w + xx) * k * k * c;
      for (std::size_t ky = 0; ky < k; ++ky) {
        long sy = static_cast<long>(y + ky) - pad;
        if (sy < 0 || sy >= static_cast<long>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          long sx = static_cast<long>(xx + kx) - pad;
          if (sx < 0 || sx >= static_cast<long>(w)) continue;
          const T* src = x.data() + (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * c;
          std::copy(src, src + c, row + (ky * k + kx) * c);
        }
      }
    }
  }
}

template <typename T>
void col2im(const RowMat<T>& col, std::size_t k, Tensor<T>& dx) {
  const std::size_t h = dx.dim(0), w = dx.dim(1), c = dx.dim(2);
  const auto pad = static_cast<long>(k / 2);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      const T* row = col.data() + (y * w + xx) * k * k * c;
      for (std::size_t ky = 0; ky < k; ++ky) {
        long sy = static_cast<long>(y + ky) - pad;
        if (sy < 0 || sy >= static_cast<long>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          long sx = static_cast<long>(xx + kx) - pad;
          if (sx < 0 || sx >= static_cast<long>(w)) continue;
          T* dst = dx.data() + (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * c;
          const T* src = row + (ky * k + kx) * c;
          for (std::size_t ci = 0; ci < c; ++ci) dst[ci] += src[ci];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, std::size_t dh, std::size_t dw) {
  require_spatial(x, "avg_pool");
  require(dh > 0 && dw > 0 && dh % 2 == 1 && dw % 2 == 1,
          "avg_pool: window extents must be odd positive integers");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const long ph = static_cast<long>(dh / 2), pw = static_cast<long>(dw / 2);
  const T inv_area = T(1) / static_cast<T>(dh * dw);
  Tensor<T> out(x.shape());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      T* dst = &out.at(y, xx, 0);
      for (long oy = -ph; oy <= ph; ++oy) {
        long sy = static_cast<long>(y) + oy;
        if (sy < 0 || sy >= static_cast<long>(h)) continue;
        for (long ox = -pw; ox <= pw; ++ox) {
          long sx = static_cast<long>(xx) + ox;
          if (sx < 0 || sx >= static_cast<long>(w)) continue;
          const T* src = &x.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), 0);
          for (std::size_t ci = 0; ci < c; ++ci) dst[ci] += src[ci];
        }
      }
      for (std::size_t ci = 0; ci < c; ++ci) dst[ci] *= inv_area;
    }
  }
  return out;
}

template <typename T>
Tensor<T> avg_pool_backward(const Tensor<T>& gy, std::size_t dh, std::size_t dw) {
  // The window is centred and symmetric, so the adjoint is the same pooling.
  return avg_pool(gy, dh, dw);
}

template <typename T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& x, std::size_t oh, std::size_t ow) {
  require_spatial(x, "adaptive_avg_pool");
  require(oh > 0 && ow > 0, "adaptive_avg_pool: output extents must be positive");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor<T> out(Shape{oh, ow, c});
  for (std::size_t i = 0; i < oh; ++i) {
    std::size_t y0 = i * h / oh, y1 = ((i + 1) * h + oh - 1) / oh;
    for (std::size_t j = 0; j < ow; ++j) {
      std::size_t x0 = j * w / ow, x1 = ((j + 1) * w + ow - 1) / ow;
      T* dst = &out.at(i, j, 0);
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t xx = x0; xx < x1; ++xx) {
          const T* src = &x.at(y, xx, 0);
          for (std::size_t ci = 0; ci < c; ++ci) dst[ci] += src[ci];
        }
      const T inv = T(1) / static_cast<T>((y1 - y0) * (x1 - x0));
      for (std::size_t ci = 0; ci < c; ++ci) dst[ci] *= inv;
    }
  }
  return out;
}

template <typename T>
Tensor<T> adaptive_avg_pool_backward(const Tensor<T>& gy, std::size_t h, std::size_t w) {
  const std::size_t oh = gy.dim(0), ow = gy.dim(1), c = gy.dim(2);
  Tensor<T> gx(Shape{h, w, c});
  for (std::size_t i = 0; i < oh; ++i) {
    std::size_t y0 = i * h / oh, y1 = ((i + 1) * h + oh - 1) / oh;
    for (std::size_t j = 0; j < ow; ++j) {
      std::size_t x0 = j * w / ow, x1 = ((j + 1) * w + ow - 1) / ow;
      const T inv = T(1) / static_cast<T>((y1 - y0) * (x1 - x0));
      const T* src = &gy.at(i, j, 0);
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t xx = x0; xx < x1; ++xx) {
          T* dst = &gx.at(y, xx, 0);
          for (std::size_t ci = 0; ci < c; ++ci) dst[ci] += src[ci] * inv;
        }
    }
  }
  return gx;
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t oh, std::size_t ow) {
  require(!x.empty(), "bilinear_resize: empty tensor");
  require(x.rank() == 2 || x.rank() == 3, "bilinear_resize: expected rank 2 or 3");
  require(oh > 0 && ow > 0, "bilinear_resize: target extents must be >= 1");
  const std::size_t h = x.dim(0), w = x.dim(1), c = channels(x);
  if (oh == h && ow == w) return x;
  Shape shape = x.rank() == 2 ? Shape{oh, ow} : Shape{oh, ow, c};
  Tensor<T> out(shape);
  std::vector<Sample> cols(ow);
  for (std::size_t j = 0; j < ow; ++j) cols[j] = source_index(j, w, ow);
  for (std::size_t i = 0; i < oh; ++i) {
    Sample r = source_index(i, h, oh);
    const T wy1 = static_cast<T>(r.w1), wy0 = T(1) - wy1;
    for (std::size_t j = 0; j < ow; ++j) {
      const Sample& s = cols[j];
      const T wx1 = static_cast<T>(s.w1), wx0 = T(1) - wx1;
      const T* p00 = x.data() + (r.i0 * w + s.i0) * c;
      const T* p01 = x.data() + (r.i0 * w + s.i1) * c;
      const T* p10 = x.data() + (r.i1 * w + s.i0) * c;
      const T* p11 = x.data() + (r.i1 * w + s.i1) * c;
      T* dst = out.data() + (i * ow + j) * c;
      for (std::size_t ci = 0; ci < c; ++ci) {
        dst[ci] = wy0 * (wx0 * p00[ci] + wx1 * p01[ci]) + wy1 * (wx0 * p10[ci] + wx1 * p11[ci]);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& gy, const Shape& in_shape) {
  const std::size_t h = in_shape[0], w = in_shape[1];
  const std::size_t oh = gy.dim(0), ow = gy.dim(1), c = channels(gy);
  if (oh == h && ow == w) return gy;
  Tensor<T> gx(in_shape);
  std::vector<Sample> cols(ow);
  for (std::size_t j = 0; j < ow; ++j) cols[j] = source_index(j, w, ow);
  for (std::size_t i = 0; i < oh; ++i) {
    Sample r = source_index(i, h, oh);
    const T wy1 = static_cast<T>(r.w1), wy0 = T(1) - wy1;
    for (std::size_t j = 0; j < ow; ++j) {
      const Sample& s = cols[j];
      const T wx1 = static_cast<T>(s.w1), wx0 = T(1) - wx1;
      const T* g = gy.data() + (i * ow + j) * c;
      T* p00 = gx.data() + (r.i0 * w + s.i0) * c;
      T* p01 = gx.data() + (r.i0 * w + s.i1) * c;
      T* p10 = gx.data() + (r.i1 * w + s.i0) * c;
      T* p11 = gx.data() + (r.i1 * w + s.i1) * c;
      for (std::size_t ci = 0; ci < c; ++ci) {
        p00[ci] += wy0 * wx0 * g[ci];
        p01[ci] += wy0 * wx1 * g[ci];
        p10[ci] += wy1 * wx0 * g[ci];
        p11[ci] += wy1 * wx1 * g[ci];
      }
    }
  }
  return gx;
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  require(a.size() == b.size(), "dot: length mismatch");
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
T l2_norm(std::span<const T> a) {
  return std::sqrt(dot<T>(a, a));
}

template <typename T>
T cosine(std::span<const T> a, std::span<const T> b) {
  require(a.size() == b.size(), "cosine: length mismatch");
  T na = l2_norm(a), nb = l2_norm(b);
  if (na < eps_norm<T>() || nb < eps_norm<T>()) return T(0);
  return dot(a, b) / (na * nb);
}

template <typename T>
Tensor<T> minmax_normalize(const Tensor<T>& x) {
  require(!x.empty(), "minmax_normalize: empty tensor");
  auto [mn, mx] = std::minmax_element(x.storage().begin(), x.storage().end());
  const T lo = *mn, range = *mx - *mn;
  Tensor<T> out(x.shape());
  if (range < eps_norm<T>()) return out;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - lo) / range;
  return out;
}

template <typename T>
std::vector<T> softmax(std::span<const T> x) {
  require(!x.empty(), "softmax: empty input");
  const T mx = *std::max_element(x.begin(), x.end());
  std::vector<T> out(x.size());
  T sum = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
  require_spatial(x, "conv2d");
  require(kernel.rank() == 4 && kernel.dim(0) == kernel.dim(1),
          "conv2d: kernel must be k x k x C_in x C_out");
  const std::size_t k = kernel.dim(0);
  require(k == 1 || k == 3, "conv2d: kernel size must be 1 or 3");
  require(kernel.dim(2) == x.dim(2),
          "conv2d: channel mismatch, input has " + std::to_string(x.dim(2)) +
              " channels, kernel expects " + std::to_string(kernel.dim(2)));
  const std::size_t cout = kernel.dim(3);
  require(bias.size() == cout, "conv2d: bias length must equal C_out");
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  Tensor<T> out(Shape{h, w, cout});
  Map<T> y(out.data(), static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(cout));
  MapC<T> wk(kernel.data(), static_cast<Eigen::Index>(k * k * cin), static_cast<Eigen::Index>(cout));
  if (k == 1) {
    MapC<T> xm(x.data(), static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(cin));
    y.noalias() = xm * wk;
  } else {
    RowMat<T> col;
    im2col(x, k, col);
    y.noalias() = col * wk;
  }
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data(), static_cast<Eigen::Index>(cout));
  y.rowwise() += b;
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel,
                               const Tensor<T>& gy, bool need_dx) {
  const std::size_t k = kernel.dim(0), cout = kernel.dim(3);
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const auto hw = static_cast<Eigen::Index>(h * w);
  const auto kk = static_cast<Eigen::Index>(k * k * cin);
  Conv2dGrads<T> g{Tensor<T>(), Tensor<T>(kernel.shape()), Tensor<T>(Shape{cout})};
  MapC<T> gym(gy.data(), hw, static_cast<Eigen::Index>(cout));
  MapC<T> wk(kernel.data(), kk, static_cast<Eigen::Index>(cout));
  Map<T> dw(g.dkernel.data(), kk, static_cast<Eigen::Index>(cout));
  // Plain row-order sum: Eigen's vectorized reductions peel by address, which
  // would make the result depend on where the buffer happens to live.
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t o = 0; o < cout; ++o) g.dbias[o] += gy[p * cout + o];
  if (k == 1) {
    MapC<T> xm(x.data(), hw, static_cast<Eigen::Index>(cin));
    dw.noalias() = xm.transpose() * gym;
    if (need_dx) {
      g.dx = Tensor<T>(x.shape());
      Map<T> dx(g.dx.data(), hw, static_cast<Eigen::Index>(cin));
      dx.noalias() = gym * wk.transpose();
    }
  } else {
    RowMat<T> col;
    im2col(x, k, col);
    dw.noalias() = col.transpose() * gym;
    if (need_dx) {
      RowMat<T> dcol = gym * wk.transpose();
      g.dx = Tensor<T>(x.shape());
      col2im(dcol, k, g.dx);
    }
  }
  return g;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a, bool transpose_b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be 2-D");
  const auto ar = static_cast<Eigen::Index>(a.dim(0)), ac = static_cast<Eigen::Index>(a.dim(1));
  const auto br = static_cast<Eigen::Index>(b.dim(0)), bc = static_cast<Eigen::Index>(b.dim(1));
  const auto n = transpose_a ? ac : ar, ka = transpose_a ? ar : ac;
  const auto kb = transpose_b ? bc : br, m = transpose_b ? br : bc;
  require(ka == kb, "matmul: inner dimension mismatch " + shape_str(a.shape()) + " * " +
                        shape_str(b.shape()));
  Tensor<T> out(Shape{static_cast<std::size_t>(n), static_cast<std::size_t>(m)});
  MapC<T> am(a.data(), ar, ac);
  MapC<T> bm(b.data(), br, bc);
  Map<T> om(out.data(), n, m);
  if (!transpose_a && !transpose_b) om.noalias() = am * bm;
  else if (transpose_a && !transpose_b) om.noalias() = am.transpose() * bm;
  else if (!transpose_a && transpose_b) om.noalias() = am * bm.transpose();
  else om.noalias() = am.transpose() * bm.transpose();
  return out;
}

template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& x, std::size_t f) {
  require_spatial(x, "space_to_depth");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  require(f > 0 && h % f == 0 && w % f == 0,
          "space_to_depth: extents " + shape_str(x.shape()) + " not divisible by " + std::to_string(f));
  Tensor<T> out(Shape{h / f, w / f, c * f * f});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx) {
      const T* src = &x.at(y, xx, 0);
      T* dst = &out.at(y / f, xx / f, ((y % f) * f + (xx % f)) * c);
      std::copy(src, src + c, dst);
    }
  return out;
}

template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& x, std::size_t f) {
  const std::size_t h = x.dim(0) * f, w = x.dim(1) * f, c = x.dim(2) / (f * f);
  Tensor<T> out(Shape{h, w, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx) {
      const T* src = &x.at(y / f, xx / f, ((y % f) * f + (xx % f)) * c);
      std::copy(src, src + c, &out.at(y, xx, 0));
    }
  return out;
}

template <typename T>
Tensor<T> binarize(const Tensor<T>& x, T threshold) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] >= threshold ? T(1) : T(0);
  return out;
}

template <typename T>
bool is_binary(const Tensor<T>& m) {
  return std::all_of(m.storage().begin(), m.storage().end(),
                     [](T v) { return v == T(0) || v == T(1); });
}

#define SYMNET_INSTANTIATE(T)                                                             \
  template Tensor<T> avg_pool(const Tensor<T>&, std::size_t, std::size_t);                \
  template Tensor<T> avg_pool_backward(const Tensor<T>&, std::size_t, std::size_t);       \
  template Tensor<T> adaptive_avg_pool(const Tensor<T>&, std::size_t, std::size_t);       \
  template Tensor<T> adaptive_avg_pool_backward(const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> bilinear_resize(const Tensor<T>&, std::size_t, std::size_t);         \
  template Tensor<T> bilinear_resize_backward(const Tensor<T>&, const Shape&);            \
  template T dot(std::span<const T>, std::span<const T>);                                 \
  template T l2_norm(std::span<const T>);                                                 \
  template T cosine(std::span<const T>, std::span<const T>);                              \
  template Tensor<T> minmax_normalize(const Tensor<T>&);                                  \
  template std::vector<T> softmax(std::span<const T>);                                    \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template Conv2dGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&,             \
                                          const Tensor<T>&, bool);                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, bool, bool);              \
  template Tensor<T> space_to_depth(const Tensor<T>&, std::size_t);                       \
  template Tensor<T> depth_to_space(const Tensor<T>&, std::size_t);                       \
  template Tensor<T> binarize(const Tensor<T>&, T);                                       \
  template bool is_binary(const Tensor<T>&);

SYMNET_INSTANTIATE(float)
SYMNET_INSTANTIATE(double)

#undef SYMNET_INSTANTIATE

}  // namespace symnet::kernels
