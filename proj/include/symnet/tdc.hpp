#pragma once

// Top-down hyper-correlation: per-block cosine correlation between the
// support and query pyramids, grouped by level and fused high-to-low.

#include <random>

#include "symnet/autograd.hpp"
#include "symnet/config.hpp"
#include "symnet/encoder.hpp"
#include "symnet/params.hpp"

namespace symnet::tdc {

template <typename T>
struct CorrelationStack {
  Tensor<T> corr1;  // H x W x N1 (low)
  Tensor<T> corr2;  // H x W x N2 (mid)
  Tensor<T> corr3;  // H x W x N3 (high)
};

template <typename T>
struct CorrelationVars {
  Var<T> corr1, corr2, corr3;
  CorrelationStack<T> detach() const { return {corr1.value(), corr2.value(), corr3.value()}; }
};

// For block pair b and query position i: reduce over support foreground
// positions j of max(cos(F_q^b(i), F_s^b(j)), 0). `support_mask` is at image
// or feature resolution; it is resized and binarized at 0.5.
template <typename T>
CorrelationVars<T> correlation_maps(const FeaturePyramid<T>& support, const FeaturePyramid<T>& query,
                                    const Tensor<T>& support_mask, std::size_t n1, std::size_t n2,
                                    std::size_t n3, CorrReduceMode reduce = CorrReduceMode::kMax);

template <typename T>
struct FuseParams {
  ConvParams<T> proj1, proj2, proj3;  // 1x1, N_i -> N'
  ConvParams<T> merge32;              // 3x3, 2N' -> N'
  ConvParams<T> merge1;               // 3x3, 2N' -> N'
  std::size_t n1 = 0, n2 = 0, n3 = 0, n_prime = 0;
};

template <typename T>
FuseParams<T> make_fuse(ParamStore<T>& store, std::size_t n1, std::size_t n2, std::size_t n3,
                        std::size_t n_prime, std::mt19937_64& rng);

// F = ReLU(Conv3(Cat[ReLU(Conv3(Cat[ReLU(Conv1(c3)), ReLU(Conv1(c2))])), ReLU(Conv1(c1))])).
template <typename T>
Var<T> top_down_fuse(Tape<T>& tape, const CorrelationVars<T>& stack, const FuseParams<T>& params);

}  // namespace symnet::tdc
