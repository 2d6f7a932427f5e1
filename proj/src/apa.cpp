#include "symnet/apa.hpp"

#include <cmath>
#include <limits>

#include "symnet/kernels.hpp"

namespace symnet::apa {

template <typename T>
AlignmentParams<T> make_alignment(ParamStore<T>& store, const std::string& prefix, std::size_t c,
                                  std::size_t d_text, std::size_t ffn_mult, double d_scale,
                                  std::mt19937_64& rng) {
  AlignmentParams<T> p;
  p.w_q = make_linear(store, prefix + ".w_q", c + d_text, c, rng);
  p.w_k = make_conv(store, prefix + ".w_k", {1, c, c}, rng);
  p.w_v = make_conv(store, prefix + ".w_v", {1, c, c}, rng);
  p.ffn_in = make_linear(store, prefix + ".ffn_in", c, ffn_mult * c, rng);
  p.ffn_out = make_linear(store, prefix + ".ffn_out", ffn_mult * c, c, rng);
  p.scale = std::sqrt(d_scale);
  return p;
}

template <typename T>
PrototypeBundle<T> PrototypeVars<T>::detach() const {
  auto v = [](const Var<T>& x) { return x.valid() ? x.value() : Tensor<T>(); };
  return {v(p_s), v(p_q), v(p_s_aug), v(p_q_aug), v(p_hybrid),
          v(p_q_plus), v(p_q_minus), v(p_s_plus), v(p_s_minus)};
}

template <typename T>
Tensor<T> feature_mask(const Tensor<T>& mask, std::size_t h, std::size_t w) {
  require(mask.rank() == 2, "mask must be H x W");
  return kernels::binarize(kernels::bilinear_resize(mask, h, w), T(0.5));
}

namespace {

template <typename T>
void require_features(const Var<T>& f, const Tensor<T>& map, const char* op) {
  require(f.shape().size() == 3, std::string(op) + ": features must be H x W x C");
  require(map.rank() == 2 && map.dim(0) == f.shape()[0] && map.dim(1) == f.shape()[1],
          std::string(op) + ": map must match the feature grid");
}

template <typename T>
std::size_t first_argmax(const Tensor<T>& m) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < m.size(); ++i)
    if (m[i] > m[best]) best = i;
  return best;
}

template <typename T>
std::size_t first_argmin(const Tensor<T>& m) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < m.size(); ++i)
    if (m[i] < m[best]) best = i;
  return best;
}

template <typename T>
Var<T> whole_mean(const Var<T>& f) {
  const Shape& s = f.shape();
  return ag::weighted_spatial_mean(f, Tensor<T>(Shape{s[0], s[1]}, T(1)));
}

}  // namespace

template <typename T>
Var<T> masked_average_prototype(const Var<T>& features, const Tensor<T>& mask) {
  require(features.shape().size() == 3, "masked_average_prototype: features must be H x W x C");
  require(kernels::is_binary(mask), "masked_average_prototype: mask must be binary");
  Tensor<T> m = feature_mask(mask, features.shape()[0], features.shape()[1]);
  try {
    return ag::weighted_spatial_mean(features, m);
  } catch (const EmptyForeground&) {
    throw EmptyForeground("masked_average_prototype: support mask has no foreground on the feature grid");
  }
}

template <typename T>
Var<T> query_prototype(const Var<T>& features, const Tensor<T>& prior, double tau1) {
  require_features(features, prior, "query_prototype");
  Tensor<T> sel(prior.shape());
  bool any = false;
  for (std::size_t i = 0; i < prior.size(); ++i) {
    if (prior[i] > static_cast<T>(tau1)) {
      sel[i] = T(1);
      any = true;
    }
  }
  if (!any) return ag::gather_position(features, first_argmax(prior));
  return ag::weighted_spatial_mean(features, sel);
}

template <typename T>
Var<T> visual_text_align(Tape<T>& tape, const Var<T>& prototype, const Tensor<T>& text,
                         const Var<T>& weighted_features, const AlignmentParams<T>& params) {
  const std::size_t c = prototype.value().size();
  const Shape& fs = weighted_features.shape();
  require(fs.size() == 3, "visual_text_align: weighted features must be H x W x C");
  require(params.w_q.w->value.dim(0) == c + text.size(),
          "visual_text_align: W_Q expects " + std::to_string(params.w_q.w->value.dim(0)) +
              " inputs, got prototype " + std::to_string(c) + " + text " + std::to_string(text.size()));
  require(params.w_k.w->value.dim(2) == fs[2], "visual_text_align: W_K input channels mismatch");
  require(params.w_q.w->value.dim(1) == c, "visual_text_align: W_Q output width must equal c");
  const std::size_t n = fs[0] * fs[1];

  Var<T> pt = ag::concat<T>({prototype, tape.constant(text.reshaped(Shape{text.size()}))});
  Var<T> q = apply(tape, params.w_q, ag::reshape(pt, Shape{1, c + text.size()}));
  Var<T> k = ag::reshape(apply(tape, params.w_k, weighted_features), Shape{n, c});
  Var<T> v = ag::reshape(apply(tape, params.w_v, weighted_features), Shape{n, c});
  Var<T> logits = ag::scale(ag::matmul(q, k, false, true), static_cast<T>(1.0 / params.scale));
  Var<T> attn = ag::softmax(logits);
  Var<T> ctx = ag::matmul(attn, v);
  Var<T> hidden = ag::relu(apply(tape, params.ffn_in, ctx));
  Var<T> out = apply(tape, params.ffn_out, hidden);
  return ag::add(ag::reshape(out, Shape{c}), prototype);
}

template <typename T>
Var<T> hybrid_prototype(const Var<T>& p_q_aug, const Var<T>& p_s_aug, double alpha, double beta) {
  require(alpha >= 0 && beta >= 0, "hybrid_prototype: alpha and beta must be non-negative");
  return ag::add(ag::scale(p_q_aug, static_cast<T>(alpha)), ag::scale(p_s_aug, static_cast<T>(beta)));
}

template <typename T>
std::pair<Var<T>, Var<T>> mine_query_triplet(const Var<T>& features, const Tensor<T>& prior,
                                             double tau2, double tau3, double tau4,
                                             TripletIndices* info) {
  require_features(features, prior, "mine_query_triplet");
  Tensor<T> neg(prior.shape()), pos(prior.shape());
  bool any_neg = false, any_pos = false;
  for (std::size_t i = 0; i < prior.size(); ++i) {
    if (prior[i] < static_cast<T>(tau2)) {
      neg[i] = T(1);
      any_neg = true;
    }
    if (prior[i] > static_cast<T>(tau3) && prior[i] < static_cast<T>(tau4)) {
      pos[i] = T(1);
      any_pos = true;
    }
  }
  Var<T> minus = any_neg ? ag::weighted_spatial_mean(features, neg)
                         : ag::gather_position(features, first_argmin(prior));
  Var<T> plus;
  if (any_pos) {
    plus = ag::weighted_spatial_mean(features, pos);
  } else {
    const double mid = 0.5 * (tau3 + tau4);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < prior.size(); ++i) {
      const double d = std::abs(static_cast<double>(prior[i]) - mid);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    plus = ag::gather_position(features, best);
  }
  if (info) {
    info->minus_fallback = !any_neg;
    info->plus_fallback = !any_pos;
  }
  return {minus, plus};
}

template <typename T>
std::pair<Var<T>, Var<T>> mine_support_triplet(const Var<T>& features, const Tensor<T>& mask,
                                               const Var<T>& p_s_aug, TripletIndices* info) {
  require(features.shape().size() == 3, "mine_support_triplet: features must be H x W x C");
  const std::size_t h = features.shape()[0], w = features.shape()[1], c = features.shape()[2];
  require(p_s_aug.value().size() == c, "mine_support_triplet: anchor length must equal C");
  Tensor<T> fg = feature_mask(mask, h, w);
  Tensor<T> bg(fg.shape());
  bool any_bg = false, any_fg = false;
  for (std::size_t i = 0; i < fg.size(); ++i) {
    bg[i] = T(1) - fg[i];
    any_bg = any_bg || bg[i] > T(0);
    any_fg = any_fg || fg[i] > T(0);
  }
  Var<T> minus = any_bg ? ag::weighted_spatial_mean(features, bg) : whole_mean(features);
  Var<T> plus;
  if (any_fg) {
    const auto& f = features.value();
    const auto& a = p_s_aug.value();
    std::size_t best = fg.size();
    T best_d = T(-1);
    for (std::size_t i = 0; i < fg.size(); ++i) {
      if (fg[i] == T(0)) continue;
      T d = 0;
      for (std::size_t j = 0; j < c; ++j) {
        const T diff = f[i * c + j] - a[j];
        d += diff * diff;
      }
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    plus = ag::gather_position(features, best);
  } else {
    plus = whole_mean(features);
  }
  if (info) {
    info->minus_fallback = !any_bg;
    info->plus_fallback = !any_fg;
  }
  return {minus, plus};
}

template <typename T>
Var<T> co_triplet_loss(const Var<T>& p_q_aug, const Var<T>& p_q_plus, const Var<T>& p_q_minus,
                       const Var<T>& p_s_aug, const Var<T>& p_s_plus, const Var<T>& p_s_minus) {
  auto hinge = [](const Var<T>& anchor, const Var<T>& plus, const Var<T>& minus) {
    Var<T> dp = ag::l2_norm(ag::sub(anchor, plus));
    Var<T> dn = ag::l2_norm(ag::sub(anchor, minus));
    Tape<T>* t = anchor.tape();
    Var<T> margin = t->constant(Tensor<T>::scalar(static_cast<T>(kTripletMargin)));
    return ag::relu(ag::sub(ag::add(dp, margin), dn));
  };
  return ag::add(hinge(p_q_aug, p_q_plus, p_q_minus), hinge(p_s_aug, p_s_plus, p_s_minus));
}

#define SYMNET_INSTANTIATE(T)                                                                   \
  template AlignmentParams<T> make_alignment(ParamStore<T>&, const std::string&, std::size_t,  \
                                             std::size_t, std::size_t, double, std::mt19937_64&); \
  template struct PrototypeVars<T>;                                                             \
  template Tensor<T> feature_mask(const Tensor<T>&, std::size_t, std::size_t);                  \
  template Var<T> masked_average_prototype(const Var<T>&, const Tensor<T>&);                    \
  template Var<T> query_prototype(const Var<T>&, const Tensor<T>&, double);                     \
  template Var<T> visual_text_align(Tape<T>&, const Var<T>&, const Tensor<T>&, const Var<T>&,   \
                                    const AlignmentParams<T>&);                                 \
  template Var<T> hybrid_prototype(const Var<T>&, const Var<T>&, double, double);               \
  template std::pair<Var<T>, Var<T>> mine_query_triplet(const Var<T>&, const Tensor<T>&, double, \
                                                        double, double, TripletIndices*);      \
  template std::pair<Var<T>, Var<T>> mine_support_triplet(const Var<T>&, const Tensor<T>&,      \
                                                          const Var<T>&, TripletIndices*);      \
  template Var<T> co_triplet_loss(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,   \
                                  const Var<T>&, const Var<T>&);

SYMNET_INSTANTIATE(float)
SYMNET_INSTANTIATE(double)

#undef SYMNET_INSTANTIATE

}  // namespace symnet::apa
