#include "symnet/model.hpp"

#include <tuple>

#include "symnet/kernels.hpp"

namespace symnet {

namespace {

template <typename T>
spm::PriorMask<T> average_priors(const std::vector<spm::PriorMask<T>>& shots) {
  std::vector<fusion::ShotSummary<T>> summaries;
  for (const auto& p : shots) summaries.push_back({p, {}, {}});
  return fusion::kshot_average(summaries).prior;
}

}  // namespace

template <typename T>
Model<T>::Model(const Config& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  encoder_ = std::make_unique<Encoder<T>>(cfg_, store_, rng);
  if (cfg_.share_align_params) {
    align_s_ = apa::make_alignment(store_, "apa.shared", cfg_.c_mid, cfg_.d_text, cfg_.ffn_mult,
                                   cfg_.d_scale, rng);
    align_q_ = align_s_;
  } else {
    align_s_ = apa::make_alignment(store_, "apa.support", cfg_.c_mid, cfg_.d_text, cfg_.ffn_mult,
                                   cfg_.d_scale, rng);
    align_q_ = apa::make_alignment(store_, "apa.query", cfg_.c_mid, cfg_.d_text, cfg_.ffn_mult,
                                   cfg_.d_scale, rng);
  }
  fuse_ = tdc::make_fuse(store_, cfg_.n1, cfg_.n2, cfg_.n3, cfg_.n_prime, rng);
  head_ = fusion::make_head(store_, fused_channels(), cfg_.decoder_width, rng);
}

template <typename T>
std::size_t Model<T>::fused_channels() const {
  return 2 * cfg_.c_mid + 1 + cfg_.n_prime;
}

template <typename T>
void Model<T>::set_ablation(bool use_spm, bool use_apa, bool use_tdc) {
  cfg_.use_spm = use_spm;
  cfg_.use_apa = use_apa;
  cfg_.use_tdc = use_tdc;
}

template <typename T>
ForwardResult<T> Model<T>::forward(Tape<T>& tape, const EpisodeInput<T>& ep,
                                   const ForwardOptions<T>& opts) const {
  const std::size_t k_shot = ep.support_images.size();
  require(k_shot >= 1, "forward: at least one support shot is required");
  require(ep.support_masks.size() == k_shot, "forward: one support mask per support image");
  const Shape& qs = ep.query_image.shape();
  require(qs.size() == 3 && qs[2] == 3, "forward: query image must be H x W x 3");
  for (std::size_t k = 0; k < k_shot; ++k) {
    require(ep.support_images[k].shape() == qs, "forward: support and query images differ in size");
    require(ep.support_masks[k].shape() == Shape({qs[0], qs[1]}),
            "forward: support mask must match its image");
    require(kernels::is_binary(ep.support_masks[k]), "forward: support mask must be binary");
  }
  require(ep.text.size() == cfg_.d_text, "forward: text embedding must have d_text entries");

  ForwardResult<T> r;
  const FeaturePyramid<T> pq = encoder_->encode(tape, ep.query_image);
  std::vector<FeaturePyramid<T>> ps;
  for (const auto& img : ep.support_images) ps.push_back(encoder_->encode(tape, img));
  const Var<T>& fq_mid = pq.mid_features();
  const std::size_t h = fq_mid.shape()[0], w = fq_mid.shape()[1];

  std::vector<spm::PriorMask<T>> priors;
  for (std::size_t k = 0; k < k_shot; ++k) {
    priors.push_back(cfg_.use_spm
                         ? spm::prior_mask(ps[k].high_features().value(),
                                           pq.high_features().value(), ep.support_masks[k],
                                           cfg_.windows, cfg_.activation_kernel)
                         : spm::uniform_prior<T>(h, w, cfg_.windows.size()));
  }
  r.prior = average_priors(priors);
  if (opts.fixed_prior) {
    require(opts.fixed_prior->shape() == Shape({h, w}),
            "forward: fixed prior must match the feature grid");
    r.prior.map = *opts.fixed_prior;
  }
  const Tensor<T>& prior = r.prior.map;

  std::vector<Var<T>> p_s_shots;
  for (std::size_t k = 0; k < k_shot; ++k)
    p_s_shots.push_back(apa::masked_average_prototype(ps[k].mid_features(), ep.support_masks[k]));
  auto& pv = r.prototypes;
  pv.p_s = ag::mean_of(p_s_shots);

  const bool want_loss = opts.compute_loss && !ep.query_mask.empty();
  if (cfg_.use_apa) {
    std::vector<Var<T>> s_aug, s_plus, s_minus;
    for (std::size_t k = 0; k < k_shot; ++k) {
      const Var<T>& fs = ps[k].mid_features();
      Tensor<T> fg = apa::feature_mask(ep.support_masks[k], h, w);
      s_aug.push_back(
          apa::visual_text_align(tape, p_s_shots[k], ep.text, ag::mul_map(fs, fg), align_s_));
      if (want_loss) {
        apa::TripletIndices info;
        auto [minus, plus] = apa::mine_support_triplet(fs, ep.support_masks[k], s_aug.back(), &info);
        s_minus.push_back(minus);
        s_plus.push_back(plus);
        r.triplet_info.push_back(info);
      }
    }
    pv.p_s_aug = ag::mean_of(s_aug);
    pv.p_q = apa::query_prototype(fq_mid, prior, cfg_.tau1);
    pv.p_q_aug = apa::visual_text_align(tape, pv.p_q, ep.text, ag::mul_map(fq_mid, prior), align_q_);
    pv.p_hybrid = apa::hybrid_prototype(pv.p_q_aug, pv.p_s_aug, cfg_.alpha, cfg_.beta);
    if (want_loss) {
      apa::TripletIndices info;
      std::tie(pv.p_q_minus, pv.p_q_plus) =
          apa::mine_query_triplet(fq_mid, prior, cfg_.tau2, cfg_.tau3, cfg_.tau4, &info);
      r.triplet_info.push_back(info);
      pv.p_s_minus = ag::mean_of(s_minus);
      pv.p_s_plus = ag::mean_of(s_plus);
      r.co_triplet = apa::co_triplet_loss(pv);
    }
  } else {
    pv.p_hybrid = pv.p_s;
  }
  if (want_loss && !r.co_triplet.valid()) r.co_triplet = tape.constant(Tensor<T>::scalar(T(0)));

  if (cfg_.use_tdc) {
    std::vector<Var<T>> c1, c2, c3;
    for (std::size_t k = 0; k < k_shot; ++k) {
      auto c = tdc::correlation_maps(ps[k], pq, ep.support_masks[k], cfg_.n1, cfg_.n2, cfg_.n3,
                                     cfg_.corr_reduce);
      c1.push_back(c.corr1);
      c2.push_back(c.corr2);
      c3.push_back(c.corr3);
    }
    r.correlations = {ag::mean_of(c1), ag::mean_of(c2), ag::mean_of(c3)};
    r.hyper = tdc::top_down_fuse(tape, r.correlations, fuse_);
  } else {
    r.hyper = tape.constant(Tensor<T>(Shape{h, w, cfg_.n_prime}));
  }

  r.preds = fusion::fuse_and_predict(tape, fq_mid, prior, pv.p_hybrid, r.hyper, head_, qs[0], qs[1]);
  if (want_loss) {
    r.seg = fusion::segmentation_loss(r.preds, ep.query_mask);
    r.total = fusion::total_loss(*r.seg, r.co_triplet);
  }
  return r;
}

template <typename T>
Tensor<T> Model<T>::predict(const EpisodeInput<T>& ep) const {
  Tape<T> tape(false);
  ForwardOptions<T> opts;
  opts.compute_loss = false;
  auto r = forward(tape, ep, opts);
  return fusion::predicted_mask(r.preds.final.value());
}

template class Model<float>;
template class Model<double>;

}  // namespace symnet
