#pragma once

// Parameter-free prior mask: multi-window region features, self-activation
// weighted region matching, per-window similarity maps and their average.

#include <cstddef>
#include <utility>
#include <vector>

#include "symnet/config.hpp"
#include "symnet/tensor.hpp"

namespace symnet::spm {

using Window = std::pair<std::size_t, std::size_t>;

template <typename T>
struct RegionFeatures {
  Window window;
  Tensor<T> support;  // H x W x C, computed from masked support features
  Tensor<T> query;    // H x W x C
};

template <typename T>
struct PriorMask {
  Tensor<T> map;                      // H x W in [0, 1]
  std::vector<Tensor<T>> per_window;  // one H x W map per window
};

// r_s = avg_pool(F_s * resize(M_s)), r_q = avg_pool(F_q). The support mask
// must be binary at its own resolution.
template <typename T>
RegionFeatures<T> region_features(const Tensor<T>& support_high, const Tensor<T>& query_high,
                                  const Tensor<T>& support_mask, Window window);

// S[i][j] = cos(r_q(i), r_s(j)) * w(i), w = <r_q, r_q> or |r_q| (kL2).
// Rows index query positions, columns support positions.
template <typename T>
Tensor<T> self_activation_scores(const Tensor<T>& region_query, const Tensor<T>& region_support,
                                 ActivationKernel kernel = ActivationKernel::kInnerProduct);

// Row means of S, min-max normalized, reshaped to h x w.
template <typename T>
Tensor<T> similarity_map(const Tensor<T>& scores, std::size_t h, std::size_t w);

template <typename T>
PriorMask<T> prior_mask(const Tensor<T>& support_high, const Tensor<T>& query_high,
                        const Tensor<T>& support_mask, const std::vector<Window>& windows,
                        ActivationKernel kernel = ActivationKernel::kInnerProduct);

// Constant map used when the prior mask is ablated.
template <typename T>
PriorMask<T> uniform_prior(std::size_t h, std::size_t w, std::size_t n_windows, T value = T(0.5));

}  // namespace symnet::spm
