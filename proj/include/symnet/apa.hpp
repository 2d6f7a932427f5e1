#pragma once

// Symmetric support / query prototype learning with visual-text alignment,
// hybrid fusion and joint hard-triplet mining.

#include <random>
#include <string>
#include <utility>

#include "symnet/params.hpp"

namespace symnet::apa {

// Single-head attention block of one branch: query from [p ; t], keys and
// values from the weighted feature map, then FFN plus a residual on p.
template <typename T>
struct AlignmentParams {
  LinearParams<T> w_q;  // (c + d_text) -> c
  ConvParams<T> w_k;    // 1x1, C_m -> c
  ConvParams<T> w_v;    // 1x1, C_m -> c
  LinearParams<T> ffn_in;   // c -> ffn_mult * c
  LinearParams<T> ffn_out;  // ffn_mult * c -> c
  double scale = 16.0;      // sqrt(d_scale)
};

template <typename T>
AlignmentParams<T> make_alignment(ParamStore<T>& store, const std::string& prefix, std::size_t c,
                                  std::size_t d_text, std::size_t ffn_mult, double d_scale,
                                  std::mt19937_64& rng);

// Detached snapshot of every prototype of one episode.
template <typename T>
struct PrototypeBundle {
  Tensor<T> p_s, p_q;
  Tensor<T> p_s_aug, p_q_aug;
  Tensor<T> p_hybrid;
  Tensor<T> p_q_plus, p_q_minus;
  Tensor<T> p_s_plus, p_s_minus;
};

template <typename T>
struct PrototypeVars {
  Var<T> p_s, p_q;
  Var<T> p_s_aug, p_q_aug;
  Var<T> p_hybrid;
  Var<T> p_q_plus, p_q_minus;
  Var<T> p_s_plus, p_s_minus;

  PrototypeBundle<T> detach() const;
};

// Support mask resized to the feature grid and binarized at 0.5.
template <typename T>
Tensor<T> feature_mask(const Tensor<T>& mask, std::size_t h, std::size_t w);

// Mean of features where the resized mask is 1. EmptyForeground when the
// resized mask has no foreground cell.
template <typename T>
Var<T> masked_average_prototype(const Var<T>& features, const Tensor<T>& mask);

// Mean of features where prior > tau1; falls back to the feature at
// argmax(prior) (first on ties) when nothing passes.
template <typename T>
Var<T> query_prototype(const Var<T>& features, const Tensor<T>& prior, double tau1);

template <typename T>
Var<T> visual_text_align(Tape<T>& tape, const Var<T>& prototype, const Tensor<T>& text,
                         const Var<T>& weighted_features, const AlignmentParams<T>& params);

template <typename T>
Var<T> hybrid_prototype(const Var<T>& p_q_aug, const Var<T>& p_s_aug, double alpha, double beta);

struct TripletIndices {
  // Set when a band was empty and a single fallback position was used.
  bool minus_fallback = false;
  bool plus_fallback = false;
};

// (negative, positive): mean where prior < tau2, and mean where
// tau3 < prior < tau4. Empty sets fall back to argmin(prior) and to the
// position closest to (tau3 + tau4) / 2 respectively.
template <typename T>
std::pair<Var<T>, Var<T>> mine_query_triplet(const Var<T>& features, const Tensor<T>& prior,
                                             double tau2, double tau3, double tau4,
                                             TripletIndices* info = nullptr);

// (negative, positive): background mean, and the foreground feature farthest
// (Euclidean) from p_s_aug with ties on the lowest index. A missing side
// falls back to the whole-map mean.
template <typename T>
std::pair<Var<T>, Var<T>> mine_support_triplet(const Var<T>& features, const Tensor<T>& mask,
                                               const Var<T>& p_s_aug,
                                               TripletIndices* info = nullptr);

inline constexpr double kTripletMargin = 0.5;

template <typename T>
Var<T> co_triplet_loss(const Var<T>& p_q_aug, const Var<T>& p_q_plus, const Var<T>& p_q_minus,
                       const Var<T>& p_s_aug, const Var<T>& p_s_plus, const Var<T>& p_s_minus);

template <typename T>
Var<T> co_triplet_loss(const PrototypeVars<T>& b) {
  return co_triplet_loss(b.p_q_aug, b.p_q_plus, b.p_q_minus, b.p_s_aug, b.p_s_plus, b.p_s_minus);
}

}  // namespace symnet::apa
