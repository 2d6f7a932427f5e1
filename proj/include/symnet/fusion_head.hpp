#pragma once

// Feature fusion decoder, segmentation losses and K-shot averaging.
//
// The decoder concatenates [F_q^m, broadcast(p_hybrid), M^pri, F^hyper],
// runs four branches at H, H/2, H/4, H/8 (adaptive average pooling, two
// 3x3 conv+ReLU, 1x1 conv to 2 logits each), upsamples the branch features
// back to H, merges them with two 3x3 conv+ReLU and a 1x1 conv, and resizes
// the merged logits to the image.

#include <array>
#include <random>
#include <vector>

#include "symnet/apa.hpp"
#include "symnet/params.hpp"
#include "symnet/spm.hpp"
#include "symnet/tdc.hpp"

namespace symnet::fusion {

inline constexpr std::size_t kScales = 4;

template <typename T>
struct PredictionSet {
  std::array<Tensor<T>, kScales> intermediates;  // H_k x W_k x 2 logits
  Tensor<T> final;                               // H_img x W_img x 2 logits
};

template <typename T>
struct PredictionVars {
  std::array<Var<T>, kScales> intermediates;
  Var<T> final;

  PredictionSet<T> detach() const;
};

template <typename T>
struct HeadParams {
  struct Branch {
    ConvParams<T> conv_a, conv_b, logits;
  };
  std::array<Branch, kScales> branches;
  ConvParams<T> merge_a, merge_b, merge_logits;
  std::size_t in_channels = 0;
};

template <typename T>
HeadParams<T> make_head(ParamStore<T>& store, std::size_t in_channels, std::size_t width,
                        std::mt19937_64& rng);

template <typename T>
PredictionVars<T> fuse_and_predict(Tape<T>& tape, const Var<T>& query_mid, const Tensor<T>& prior,
                                   const Var<T>& p_hybrid, const Var<T>& hyper,
                                   const HeadParams<T>& params, std::size_t image_h,
                                   std::size_t image_w);

template <typename T>
struct SegLoss {
  Var<T> inter;  // mean over the four scales of per-pixel BCE
  Var<T> final;  // per-pixel BCE at image resolution
};

// Ground truth is bilinearly resized to each intermediate scale and
// binarized at 0.5. InvalidArgument for non-binary ground truth.
template <typename T>
SegLoss<T> segmentation_loss(const PredictionVars<T>& preds, const Tensor<T>& gt);

// Unweighted sum of the triplet loss and both segmentation terms.
template <typename T>
Var<T> total_loss(const SegLoss<T>& seg, const Var<T>& co_triplet);

// Argmax over the two final logits; 1 marks foreground.
template <typename T>
Tensor<T> predicted_mask(const Tensor<T>& final_logits);

template <typename T>
struct ShotSummary {
  spm::PriorMask<T> prior;
  apa::PrototypeBundle<T> prototypes;
  tdc::CorrelationStack<T> correlations;
};

// Element-wise mean of every component across shots; K = 1 is the identity.
// Prototype fields left empty in the first shot stay empty.
template <typename T>
ShotSummary<T> kshot_average(const std::vector<ShotSummary<T>>& shots);

}  // namespace symnet::fusion
