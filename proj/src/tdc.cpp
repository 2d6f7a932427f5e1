#include "symnet/tdc.hpp"

#include "symnet/apa.hpp"

namespace symnet::tdc {

template <typename T>
CorrelationVars<T> correlation_maps(const FeaturePyramid<T>& support, const FeaturePyramid<T>& query,
                                    const Tensor<T>& support_mask, std::size_t n1, std::size_t n2,
                                    std::size_t n3, CorrReduceMode reduce) {
  auto check_level = [](const std::vector<Var<T>>& s, const std::vector<Var<T>>& q, std::size_t n,
                        const char* level) {
    require(s.size() == n && q.size() == n,
            std::string("correlation_maps: ") + level + " level has " + std::to_string(s.size()) +
                "/" + std::to_string(q.size()) + " blocks, expected " + std::to_string(n));
  };
  check_level(support.low, query.low, n1, "low");
  check_level(support.mid, query.mid, n2, "mid");
  check_level(support.high, query.high, n3, "high");
  const Shape& fs = support.low.front().shape();
  const Tensor<T> fg = apa::feature_mask(support_mask, fs[0], fs[1]);
  const auto mode = reduce == CorrReduceMode::kMean ? ag::CorrReduce::kMean : ag::CorrReduce::kMax;
  auto level = [&](const std::vector<Var<T>>& s, const std::vector<Var<T>>& q) {
    std::vector<Var<T>> maps;
    for (std::size_t b = 0; b < s.size(); ++b)
      maps.push_back(ag::masked_cosine_correlation(q[b], s[b], fg, mode));
    return ag::concat(maps);
  };
  return {level(support.low, query.low), level(support.mid, query.mid),
          level(support.high, query.high)};
}

template <typename T>
FuseParams<T> make_fuse(ParamStore<T>& store, std::size_t n1, std::size_t n2, std::size_t n3,
                        std::size_t n_prime, std::mt19937_64& rng) {
  FuseParams<T> p;
  p.proj1 = make_conv(store, "tdc.proj1", {1, n1, n_prime}, rng);
  p.proj2 = make_conv(store, "tdc.proj2", {1, n2, n_prime}, rng);
  p.proj3 = make_conv(store, "tdc.proj3", {1, n3, n_prime}, rng);
  p.merge32 = make_conv(store, "tdc.merge32", {3, 2 * n_prime, n_prime}, rng);
  p.merge1 = make_conv(store, "tdc.merge1", {3, 2 * n_prime, n_prime}, rng);
  p.n1 = n1;
  p.n2 = n2;
  p.n3 = n3;
  p.n_prime = n_prime;
  return p;
}

template <typename T>
Var<T> top_down_fuse(Tape<T>& tape, const CorrelationVars<T>& stack, const FuseParams<T>& params) {
  auto channels_of = [](const Var<T>& v) { return v.shape().size() == 3 ? v.shape()[2] : 0; };
  require(channels_of(stack.corr1) == params.n1 && channels_of(stack.corr2) == params.n2 &&
              channels_of(stack.corr3) == params.n3,
          "top_down_fuse: correlation channel counts do not match the configured N1, N2, N3");
  Var<T> c3 = ag::relu(apply(tape, params.proj3, stack.corr3));
  Var<T> c2 = ag::relu(apply(tape, params.proj2, stack.corr2));
  Var<T> c1 = ag::relu(apply(tape, params.proj1, stack.corr1));
  Var<T> top = ag::relu(apply(tape, params.merge32, ag::concat<T>({c3, c2})));
  return ag::relu(apply(tape, params.merge1, ag::concat<T>({top, c1})));
}

#define SYMNET_INSTANTIATE(T)                                                                      \
  template CorrelationVars<T> correlation_maps(const FeaturePyramid<T>&, const FeaturePyramid<T>&, \
                                               const Tensor<T>&, std::size_t, std::size_t,         \
                                               std::size_t, CorrReduceMode);                       \
  template FuseParams<T> make_fuse(ParamStore<T>&, std::size_t, std::size_t, std::size_t,          \
                                   std::size_t, std::mt19937_64&);                                 \
  template Var<T> top_down_fuse(Tape<T>&, const CorrelationVars<T>&, const FuseParams<T>&);

SYMNET_INSTANTIATE(float)
SYMNET_INSTANTIATE(double)

#undef SYMNET_INSTANTIATE

}  // namespace symnet::tdc
