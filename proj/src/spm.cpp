#include "symnet/spm.hpp"

#include <cmath>

#include "symnet/kernels.hpp"

namespace symnet::spm {

namespace {

template <typename T>
Tensor<T> unit_rows(const Tensor<T>& x, std::size_t rows, std::size_t c) {
  Tensor<T> out(Shape{rows, c});
  for (std::size_t r = 0; r < rows; ++r) {
    std::span<const T> row(x.data() + r * c, c);
    const T n = kernels::l2_norm(row);
    if (n < eps_norm<T>()) continue;
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = row[j] / n;
  }
  return out;
}

}  // namespace

template <typename T>
RegionFeatures<T> region_features(const Tensor<T>& support_high, const Tensor<T>& query_high,
                                  const Tensor<T>& support_mask, Window window) {
  require(support_high.rank() == 3 && query_high.rank() == 3,
          "region_features: features must be H x W x C");
  require(support_high.dim(2) == query_high.dim(2), "region_features: channel counts differ");
  require(support_mask.rank() == 2, "region_features: support mask must be H x W");
  require(kernels::is_binary(support_mask), "region_features: support mask must be binary {0, 1}");
  const std::size_t h = support_high.dim(0), w = support_high.dim(1), c = support_high.dim(2);
  Tensor<T> m = kernels::bilinear_resize(support_mask, h, w);
  Tensor<T> masked = support_high;
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t j = 0; j < c; ++j) masked[p * c + j] *= m[p];
  return {window, kernels::avg_pool(masked, window.first, window.second),
          kernels::avg_pool(query_high, window.first, window.second)};
}

template <typename T>
Tensor<T> self_activation_scores(const Tensor<T>& region_query, const Tensor<T>& region_support,
                                 ActivationKernel kernel) {
  require(region_query.rank() == 3 && region_support.rank() == 3,
          "self_activation_scores: region features must be H x W x C");
  require(region_query.dim(2) == region_support.dim(2),
          "self_activation_scores: channel counts differ");
  const std::size_t c = region_query.dim(2);
  const std::size_t nq = region_query.dim(0) * region_query.dim(1);
  const std::size_t ns = region_support.dim(0) * region_support.dim(1);
  Tensor<T> scores = kernels::matmul(unit_rows(region_query, nq, c),
                                     unit_rows(region_support, ns, c), false, true);
  for (std::size_t i = 0; i < nq; ++i) {
    std::span<const T> rq(region_query.data() + i * c, c);
    T weight = kernels::dot(rq, rq);
    if (kernel == ActivationKernel::kL2) weight = std::sqrt(weight);
    for (std::size_t j = 0; j < ns; ++j) scores[i * ns + j] *= weight;
  }
  return scores;
}

template <typename T>
Tensor<T> similarity_map(const Tensor<T>& scores, std::size_t h, std::size_t w) {
  require(scores.rank() == 2 && scores.dim(0) == scores.dim(1) && scores.dim(0) == h * w,
          "similarity_map: scores must be HW x HW");
  const std::size_t n = h * w;
  Tensor<T> row_mean(Shape{h, w});
  for (std::size_t i = 0; i < n; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < n; ++j) s += scores[i * n + j];
    row_mean[i] = s / static_cast<T>(n);
  }
  return kernels::minmax_normalize(row_mean);
}

template <typename T>
PriorMask<T> prior_mask(const Tensor<T>& support_high, const Tensor<T>& query_high,
                        const Tensor<T>& support_mask, const std::vector<Window>& windows,
                        ActivationKernel kernel) {
  require(!windows.empty(), "prior_mask: no pooling windows");
  const std::size_t h = query_high.dim(0), w = query_high.dim(1);
  PriorMask<T> out;
  out.map = Tensor<T>(Shape{h, w});
  for (const auto& win : windows) {
    auto regions = region_features(support_high, query_high, support_mask, win);
    auto scores = self_activation_scores(regions.query, regions.support, kernel);
    out.per_window.push_back(similarity_map(scores, h, w));
  }
  for (const auto& m : out.per_window)
    for (std::size_t i = 0; i < m.size(); ++i) out.map[i] += m[i];
  const T inv = T(1) / static_cast<T>(windows.size());
  for (auto& v : out.map.storage()) v *= inv;
  return out;
}

template <typename T>
PriorMask<T> uniform_prior(std::size_t h, std::size_t w, std::size_t n_windows, T value) {
  PriorMask<T> out;
  out.map = Tensor<T>(Shape{h, w}, value);
  out.per_window.assign(n_windows, out.map);
  return out;
}

#define SYMNET_INSTANTIATE(T)                                                                 \
  template RegionFeatures<T> region_features(const Tensor<T>&, const Tensor<T>&,             \
                                             const Tensor<T>&, Window);                      \
  template Tensor<T> self_activation_scores(const Tensor<T>&, const Tensor<T>&,              \
                                            ActivationKernel);                               \
  template Tensor<T> similarity_map(const Tensor<T>&, std::size_t, std::size_t);             \
  template PriorMask<T> prior_mask(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                   const std::vector<Window>&, ActivationKernel);            \
  template PriorMask<T> uniform_prior(std::size_t, std::size_t, std::size_t, T);

SYMNET_INSTANTIATE(float)
SYMNET_INSTANTIATE(double)

#undef SYMNET_INSTANTIATE

}  // namespace symnet::spm
