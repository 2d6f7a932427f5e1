#pragma once

// Full few-shot segmentation network: shared encoder, prior mask, prototype
// alignment, hyper-correlation and the fusion decoder, with K-shot support
// and per-module ablation switches taken from the Config.

#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "symnet/apa.hpp"
#include "symnet/config.hpp"
#include "symnet/encoder.hpp"
#include "symnet/fusion_head.hpp"
#include "symnet/spm.hpp"
#include "symnet/tdc.hpp"

namespace symnet {

template <typename T>
struct EpisodeInput {
  std::vector<Tensor<T>> support_images;  // K x (H x W x 3)
  std::vector<Tensor<T>> support_masks;   // K x (H x W), binary
  Tensor<T> query_image;
  Tensor<T> query_mask;  // optional; required for losses
  Tensor<T> text;        // d_text
};

template <typename T>
struct ForwardOptions {
  // Replaces the computed prior mask (feature resolution). Used to hold the
  // non-differentiable prior fixed during finite-difference checks.
  std::optional<Tensor<T>> fixed_prior;
  bool compute_loss = true;
};

template <typename T>
struct ForwardResult {
  fusion::PredictionVars<T> preds;
  spm::PriorMask<T> prior;        // averaged over shots
  apa::PrototypeVars<T> prototypes;
  tdc::CorrelationVars<T> correlations;  // averaged over shots; invalid when TDC is off
  Var<T> hyper;
  Var<T> co_triplet;  // zero when APA is off
  std::optional<fusion::SegLoss<T>> seg;
  Var<T> total;  // valid when compute_loss and a query mask were given
  std::vector<apa::TripletIndices> triplet_info;
};

template <typename T>
class Model {
 public:
  // Parameters are drawn from a generator seeded with cfg.seed.
  explicit Model(const Config& cfg);

  ForwardResult<T> forward(Tape<T>& tape, const EpisodeInput<T>& ep,
                           const ForwardOptions<T>& opts = {}) const;

  // Argmax mask of a forward pass without gradient tracking.
  Tensor<T> predict(const EpisodeInput<T>& ep) const;

  const Config& config() const { return cfg_; }
  // Ablation flags only; the architecture never changes.
  void set_ablation(bool use_spm, bool use_apa, bool use_tdc);

  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  std::size_t fused_channels() const;

 private:
  Config cfg_;
  ParamStore<T> store_;
  std::unique_ptr<Encoder<T>> encoder_;
  apa::AlignmentParams<T> align_s_, align_q_;
  tdc::FuseParams<T> fuse_;
  fusion::HeadParams<T> head_;
};

}  // namespace symnet
