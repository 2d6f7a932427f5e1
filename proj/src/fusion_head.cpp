#include "symnet/fusion_head.hpp"

#include "symnet/kernels.hpp"

namespace symnet::fusion {

template <typename T>
PredictionSet<T> PredictionVars<T>::detach() const {
  PredictionSet<T> out;
  for (std::size_t k = 0; k < kScales; ++k) out.intermediates[k] = intermediates[k].value();
  out.final = final.value();
  return out;
}

template <typename T>
HeadParams<T> make_head(ParamStore<T>& store, std::size_t in_channels, std::size_t width,
                        std::mt19937_64& rng) {
  HeadParams<T> p;
  p.in_channels = in_channels;
  for (std::size_t k = 0; k < kScales; ++k) {
    const std::string prefix = "head.branch" + std::to_string(k);
    p.branches[k].conv_a = make_conv(store, prefix + ".conv_a", {3, in_channels, width}, rng);
    p.branches[k].conv_b = make_conv(store, prefix + ".conv_b", {3, width, width}, rng);
    p.branches[k].logits = make_conv(store, prefix + ".logits", {1, width, 2}, rng);
  }
  p.merge_a = make_conv(store, "head.merge_a", {3, kScales * width, width}, rng);
  p.merge_b = make_conv(store, "head.merge_b", {3, width, width}, rng);
  p.merge_logits = make_conv(store, "head.merge_logits", {1, width, 2}, rng);
  return p;
}

template <typename T>
PredictionVars<T> fuse_and_predict(Tape<T>& tape, const Var<T>& query_mid, const Tensor<T>& prior,
                                   const Var<T>& p_hybrid, const Var<T>& hyper,
                                   const HeadParams<T>& params, std::size_t image_h,
                                   std::size_t image_w) {
  const Shape& qs = query_mid.shape();
  require(qs.size() == 3, "fuse_and_predict: query features must be H x W x C");
  const std::size_t h = qs[0], w = qs[1];
  require(hyper.shape().size() == 3 && hyper.shape()[0] == h && hyper.shape()[1] == w,
          "fuse_and_predict: hyper-correlation features must share the query grid");
  require(prior.rank() == 2, "fuse_and_predict: prior mask must be H x W");
  require(h % 8 == 0 && w % 8 == 0, "fuse_and_predict: feature grid must be divisible by 8");

  Tensor<T> prior_map = kernels::bilinear_resize(prior, h, w).reshaped(Shape{h, w, 1});
  Var<T> x = ag::concat<T>({query_mid, ag::broadcast_spatial(p_hybrid, h, w),
                            tape.constant(std::move(prior_map)), hyper});
  require(x.shape()[2] == params.in_channels,
          "fuse_and_predict: fused input has " + std::to_string(x.shape()[2]) +
              " channels, decoder expects " + std::to_string(params.in_channels));

  PredictionVars<T> out;
  std::vector<Var<T>> upsampled;
  for (std::size_t k = 0; k < kScales; ++k) {
    const auto& b = params.branches[k];
    const std::size_t sh = h >> k, sw = w >> k;
    Var<T> f = k == 0 ? x : ag::adaptive_avg_pool(x, sh, sw);
    f = ag::relu(apply(tape, b.conv_a, f));
    f = ag::relu(apply(tape, b.conv_b, f));
    out.intermediates[k] = apply(tape, b.logits, f);
    upsampled.push_back(k == 0 ? f : ag::bilinear_resize(f, h, w));
  }
  Var<T> m = ag::relu(apply(tape, params.merge_a, ag::concat(upsampled)));
  m = ag::relu(apply(tape, params.merge_b, m));
  out.final = ag::bilinear_resize(apply(tape, params.merge_logits, m), image_h, image_w);
  return out;
}

template <typename T>
SegLoss<T> segmentation_loss(const PredictionVars<T>& preds, const Tensor<T>& gt) {
  require(gt.rank() == 2, "segmentation_loss: ground truth must be H x W");
  require(kernels::is_binary(gt), "segmentation_loss: ground truth must be binary");
  const Shape& fs = preds.final.shape();
  require(fs[0] == gt.dim(0) && fs[1] == gt.dim(1),
          "segmentation_loss: final prediction must match the ground-truth resolution");
  std::vector<Var<T>> terms;
  for (const auto& logits : preds.intermediates) {
    const Shape& s = logits.shape();
    Tensor<T> target = kernels::binarize(kernels::bilinear_resize(gt, s[0], s[1]), T(0.5));
    terms.push_back(ag::cross_entropy_2class(logits, target));
  }
  Var<T> inter = ag::mean_of(terms);
  return {inter, ag::cross_entropy_2class(preds.final, gt)};
}

template <typename T>
Var<T> total_loss(const SegLoss<T>& seg, const Var<T>& co_triplet) {
  return ag::add(co_triplet, ag::add(seg.inter, seg.final));
}

template <typename T>
Tensor<T> predicted_mask(const Tensor<T>& final_logits) {
  require(final_logits.rank() == 3 && final_logits.dim(2) == 2,
          "predicted_mask: logits must be H x W x 2");
  Tensor<T> m(Shape{final_logits.dim(0), final_logits.dim(1)});
  for (std::size_t p = 0; p < m.size(); ++p)
    m[p] = final_logits[2 * p + 1] > final_logits[2 * p] ? T(1) : T(0);
  return m;
}

namespace {

template <typename T>
Tensor<T> mean_tensor(const std::vector<const Tensor<T>*>& xs) {
  if (xs.front()->empty()) return Tensor<T>();
  Tensor<T> out = *xs.front();
  for (std::size_t k = 1; k < xs.size(); ++k) {
    require(xs[k]->shape() == out.shape(), "kshot_average: shots have inconsistent shapes");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*xs[k])[i];
  }
  if (xs.size() > 1) {
    const T inv = T(1) / static_cast<T>(xs.size());
    for (auto& v : out.storage()) v *= inv;
  }
  return out;
}

}  // namespace

template <typename T>
ShotSummary<T> kshot_average(const std::vector<ShotSummary<T>>& shots) {
  require(!shots.empty(), "kshot_average: K must be at least 1");
  if (shots.size() == 1) return shots.front();
  auto gather = [&](auto member) {
    std::vector<const Tensor<T>*> xs;
    for (const auto& s : shots) xs.push_back(&member(s));
    return mean_tensor(xs);
  };
  ShotSummary<T> out;
  out.prior.map = gather([](const ShotSummary<T>& s) -> const Tensor<T>& { return s.prior.map; });
  const std::size_t nw = shots.front().prior.per_window.size();
  for (const auto& s : shots)
    require(s.prior.per_window.size() == nw, "kshot_average: shots use different window sets");
  for (std::size_t w = 0; w < nw; ++w) {
    out.prior.per_window.push_back(gather(
        [w](const ShotSummary<T>& s) -> const Tensor<T>& { return s.prior.per_window[w]; }));
  }
#define SYMNET_AVG_FIELD(obj, field) \
  out.obj.field = gather([](const ShotSummary<T>& s) -> const Tensor<T>& { return s.obj.field; })
  SYMNET_AVG_FIELD(prototypes, p_s);
  SYMNET_AVG_FIELD(prototypes, p_q);
  SYMNET_AVG_FIELD(prototypes, p_s_aug);
  SYMNET_AVG_FIELD(prototypes, p_q_aug);
  SYMNET_AVG_FIELD(prototypes, p_hybrid);
  SYMNET_AVG_FIELD(prototypes, p_q_plus);
  SYMNET_AVG_FIELD(prototypes, p_q_minus);
  SYMNET_AVG_FIELD(prototypes, p_s_plus);
  SYMNET_AVG_FIELD(prototypes, p_s_minus);
  SYMNET_AVG_FIELD(correlations, corr1);
  SYMNET_AVG_FIELD(correlations, corr2);
  SYMNET_AVG_FIELD(correlations, corr3);
#undef SYMNET_AVG_FIELD
  return out;
}

#define SYMNET_INSTANTIATE(T)                                                                    \
  template struct PredictionVars<T>;                                                             \
  template HeadParams<T> make_head(ParamStore<T>&, std::size_t, std::size_t, std::mt19937_64&);  \
  template PredictionVars<T> fuse_and_predict(Tape<T>&, const Var<T>&, const Tensor<T>&,         \
                                              const Var<T>&, const Var<T>&, const HeadParams<T>&, \
                                              std::size_t, std::size_t);                         \
  template SegLoss<T> segmentation_loss(const PredictionVars<T>&, const Tensor<T>&);             \
  template Var<T> total_loss(const SegLoss<T>&, const Var<T>&);                                  \
  template Tensor<T> predicted_mask(const Tensor<T>&);                                           \
  template ShotSummary<T> kshot_average(const std::vector<ShotSummary<T>>&);

SYMNET_INSTANTIATE(float)
SYMNET_INSTANTIATE(double)

#undef SYMNET_INSTANTIATE

}  // namespace symnet::fusion
