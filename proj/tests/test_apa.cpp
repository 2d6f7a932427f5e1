#include <gtest/gtest.h>

#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "symnet/apa.hpp"
#include "symnet/model.hpp"

namespace {

using namespace symnet;
using fixtures::as_vector;
using fixtures::random_mask;
using fixtures::random_tensor;

std::vector<double> masked_mean(const Tensor<double>& f, const std::vector<bool>& sel) {
  const std::size_t c = f.dim(2), n = f.dim(0) * f.dim(1);
  std::vector<double> out(c, 0.0);
  std::size_t count = 0;
  for (std::size_t p = 0; p < n; ++p) {
    if (!sel[p]) continue;
    ++count;
    for (std::size_t k = 0; k < c; ++k) out[k] += f[p * c + k];
  }
  for (auto& v : out) v /= static_cast<double>(count);
  return out;
}

std::vector<double> at(const Tensor<double>& f, std::size_t p) {
  const std::size_t c = f.dim(2);
  return std::vector<double>(f.data() + p * c, f.data() + (p + 1) * c);
}

TEST(MaskedAveragePrototype, Examples) {
  std::mt19937_64 rng(1);
  auto f = random_tensor<double>(Shape{4, 4, 3}, rng);
  Tape<double> t(false);
  auto fv = t.constant(f);
  auto all = apa::masked_average_prototype(fv, Tensor<double>(Shape{4, 4}, 1.0));
  EXPECT_LT(oracle::max_abs_diff(all.value(), masked_mean(f, std::vector<bool>(16, true))), 1e-12);

  Tensor<double> one(Shape{4, 4});
  one[9] = 1;
  EXPECT_EQ(apa::masked_average_prototype(fv, one).value().storage(), at(f, 9));

  auto m = random_mask<double>(4, 4, rng);
  m[0] = 1;
  std::vector<bool> sel;
  for (double v : m.storage()) sel.push_back(v > 0.5);
  EXPECT_LT(oracle::max_abs_diff(apa::masked_average_prototype(fv, m).value(), masked_mean(f, sel)), 1e-6);
}

TEST(MaskedAveragePrototype, EmptyForegroundIsReported) {
  Tape<double> t(false);
  auto f = t.constant(Tensor<double>(Shape{4, 4, 2}, 1.0));
  EXPECT_THROW(apa::masked_average_prototype(f, Tensor<double>(Shape{16, 16})), EmptyForeground);
  // A single pixel that vanishes when the mask is downsized also counts.
  Tensor<double> speck(Shape{16, 16});
  speck[0] = 1;
  EXPECT_THROW(apa::masked_average_prototype(f, speck), EmptyForeground);
}

TEST(QueryPrototype, ThresholdAndFallback) {
  std::mt19937_64 rng(2);
  auto f = random_tensor<double>(Shape{3, 3, 4}, rng);
  Tape<double> t(false);
  auto fv = t.constant(f);
  Tensor<double> prior(Shape{3, 3}, 0.2);
  prior[5] = 0.9;
  EXPECT_EQ(apa::query_prototype(fv, prior, 0.7).value().storage(), at(f, 5));
  prior[5] = 0.6;
  prior[7] = 0.65;
  EXPECT_EQ(apa::query_prototype(fv, prior, 0.7).value().storage(), at(f, 7));

  auto r = random_tensor<double>(Shape{3, 3}, rng, 0.0, 1.0);
  std::vector<bool> sel;
  for (double v : r.storage()) sel.push_back(v > 0.5);
  if (std::find(sel.begin(), sel.end(), true) != sel.end())
    EXPECT_LT(oracle::max_abs_diff(apa::query_prototype(fv, r, 0.5).value(), masked_mean(f, sel)), 1e-6);
}

struct AlignFixture : ::testing::Test {
  std::mt19937_64 rng{3};
  ParamStore<double> store;
  apa::AlignmentParams<double> params;
  const std::size_t c = 4, d = 3;

  void SetUp() override {
    params = apa::make_alignment(store, "apa.test", c, d, 2, 256.0, rng);
    // Non-zero biases so the oracle exercises every term.
    store.for_each([&](Parameter<double>& p) {
      if (p.name.size() > 2 && p.name.substr(p.name.size() - 2) == ".b")
        p.value = random_tensor<double>(p.value.shape(), rng, -0.3, 0.3);
    });
  }

  std::vector<double> run(const Tensor<double>& p, const Tensor<double>& text, const Tensor<double>& f) {
    Tape<double> t(false);
    return as_vector(apa::visual_text_align(t, t.constant(p), text, t.constant(f), params).value());
  }

  std::vector<double> ffn(const std::vector<double>& x) {
    const auto& w1 = params.ffn_in.w->value;
    const auto& b1 = params.ffn_in.b->value;
    const auto& w2 = params.ffn_out.w->value;
    const auto& b2 = params.ffn_out.b->value;
    std::vector<double> h(w1.dim(1));
    for (std::size_t o = 0; o < h.size(); ++o) {
      double s = b1[o];
      for (std::size_t i = 0; i < c; ++i) s += x[i] * w1[i * h.size() + o];
      h[o] = std::max(0.0, s);
    }
    std::vector<double> out(c);
    for (std::size_t o = 0; o < c; ++o) {
      double s = b2[o];
      for (std::size_t i = 0; i < h.size(); ++i) s += h[i] * w2[i * c + o];
      out[o] = s;
    }
    return out;
  }
};

TEST_F(AlignFixture, ZeroFeaturesGiveFfnOfValueBiasPlusPrototype) {
  // With F = 0 every value row equals the W_V bias, so the attention output
  // is that bias whatever the weights.
  auto p = random_tensor<double>(Shape{c}, rng), text = random_tensor<double>(Shape{d}, rng);
  auto out = run(p, text, Tensor<double>(Shape{2, 2, c}));
  auto expect = ffn(as_vector(params.w_v.b->value));
  for (std::size_t i = 0; i < c; ++i) EXPECT_NEAR(out[i], expect[i] + p[i], 1e-12);
}

TEST_F(AlignFixture, SingletonAttendsFully) {
  auto p = random_tensor<double>(Shape{c}, rng), text = random_tensor<double>(Shape{d}, rng);
  auto f = random_tensor<double>(Shape{1, 1, c}, rng);
  std::vector<double> v1(c);
  for (std::size_t o = 0; o < c; ++o) {
    double s = params.w_v.b->value[o];
    for (std::size_t i = 0; i < c; ++i) s += f[i] * params.w_v.w->value[i * c + o];
    v1[o] = s;
  }
  auto expect = ffn(v1);
  auto out = run(p, text, f);
  for (std::size_t i = 0; i < c; ++i) EXPECT_NEAR(out[i], expect[i] + p[i], 1e-12);
}

TEST_F(AlignFixture, MatchesExplicitAttentionOracle) {
  for (int trial = 0; trial < 10; ++trial) {
    auto p = random_tensor<double>(Shape{c}, rng), text = random_tensor<double>(Shape{d}, rng);
    auto f = random_tensor<double>(Shape{2, 2, c}, rng, -3, 3);
    auto ref = oracle::attention(as_vector(p), as_vector(text), oracle::grid(f), params.w_q.w->value,
                                 params.w_q.b->value, params.w_k.w->value, params.w_k.b->value,
                                 params.w_v.w->value, params.w_v.b->value, params.ffn_in.w->value,
                                 params.ffn_in.b->value, params.ffn_out.w->value, params.ffn_out.b->value, 16.0);
    EXPECT_LT(oracle::max_abs_diff(run(p, text, f), ref), 1e-5);
  }
}

TEST_F(AlignFixture, DimensionMismatchIsInvalid) {
  Tape<double> t(false);
  auto p = t.constant(Tensor<double>(Shape{c}));
  EXPECT_THROW(apa::visual_text_align(t, p, Tensor<double>(Shape{d + 1}), t.constant(Tensor<double>(Shape{2, 2, c})), params),
               InvalidArgument);
  EXPECT_THROW(apa::visual_text_align(t, p, Tensor<double>(Shape{d}), t.constant(Tensor<double>(Shape{2, 2, c + 1})), params),
               InvalidArgument);
}

TEST_F(AlignFixture, GradientMatchesFiniteDifferences) {
  auto text = random_tensor<double>(Shape{d}, rng);
  auto res = gradcheck::check(
      [&](Tape<double>& t, const std::vector<Var<double>>& v) {
        return gradcheck::weighted_sum(t, apa::visual_text_align(t, v[0], text, v[1], params));
      },
      {random_tensor<double>(Shape{c}, rng), random_tensor<double>(Shape{3, 2, c}, rng)});
  EXPECT_TRUE(res.ok()) << res.worst << " " << res.where;
}

TEST(Hybrid, LinearCombination) {
  std::mt19937_64 rng(4);
  auto a = random_tensor<double>(Shape{5}, rng), b = random_tensor<double>(Shape{5}, rng);
  Tape<double> t(false);
  auto av = t.constant(a), bv = t.constant(b);
  EXPECT_EQ(apa::hybrid_prototype(av, bv, 1.0, 0.0).value().storage(), a.storage());
  EXPECT_EQ(apa::hybrid_prototype(av, av, 0.5, 0.5).value().storage(), a.storage());
  auto h = apa::hybrid_prototype(av, bv, 0.3, 1.7).value();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(h[i], 0.3 * a[i] + 1.7 * b[i]);
  EXPECT_THROW(apa::hybrid_prototype(av, bv, -0.1, 0.5), InvalidArgument);
}

TEST(Hybrid, IsLinearInEachArgument) {
  std::mt19937_64 rng(5);
  auto a1 = random_tensor<double>(Shape{4}, rng), a2 = random_tensor<double>(Shape{4}, rng);
  auto b = random_tensor<double>(Shape{4}, rng);
  Tape<double> t(false);
  auto sum = a1;
  for (std::size_t i = 0; i < 4; ++i) sum[i] += a2[i];
  auto lhs = apa::hybrid_prototype(t.constant(sum), t.constant(b), 0.5, 0.5).value();
  auto r1 = apa::hybrid_prototype(t.constant(a1), t.constant(b), 0.5, 0.5).value();
  auto r2 = apa::hybrid_prototype(t.constant(a2), t.constant(b), 0.5, 0.0).value();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(lhs[i], r1[i] + r2[i], 1e-12);
}

TEST(QueryTriplet, StepPriorBands) {
  std::mt19937_64 rng(6);
  auto f = random_tensor<double>(Shape{2, 4, 3}, rng);
  Tensor<double> prior(Shape{2, 4});
  std::vector<bool> left(8);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 4; ++c) {
      prior.at(r, c) = c < 2 ? 0.2 : 0.9;
      left[r * 4 + c] = c < 2;
    }
  Tape<double> t(false);
  apa::TripletIndices info;
  auto [minus, plus] = apa::mine_query_triplet(t.constant(f), prior, 0.4, 0.40, 0.55, &info);
  EXPECT_LT(oracle::max_abs_diff(minus.value(), masked_mean(f, left)), 1e-12);
  EXPECT_TRUE(info.plus_fallback);
  // |0.2 - 0.475| < |0.9 - 0.475|: the first left position.
  EXPECT_EQ(plus.value().storage(), at(f, 0));
}

TEST(QueryTriplet, AllInBandGivesGlobalMean) {
  std::mt19937_64 rng(7);
  auto f = random_tensor<double>(Shape{3, 3, 2}, rng);
  Tensor<double> prior(Shape{3, 3}, 0.5);
  Tape<double> t(false);
  auto [minus, plus] = apa::mine_query_triplet(t.constant(f), prior, 0.4, 0.40, 0.55);
  EXPECT_LT(oracle::max_abs_diff(plus.value(), masked_mean(f, std::vector<bool>(9, true))), 1e-12);
  EXPECT_EQ(minus.value().storage(), at(f, 0));  // argmin fallback, first on ties
}

TEST(QueryTriplet, MatchesBandOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto f = random_tensor<double>(Shape{5, 5, 3}, rng);
    auto prior = random_tensor<double>(Shape{5, 5}, rng, 0.0, 1.0);
    std::vector<bool> neg, pos;
    for (double v : prior.storage()) {
      neg.push_back(v < 0.4);
      pos.push_back(v > 0.4 && v < 0.55);
    }
    Tape<double> t(false);
    apa::TripletIndices info;
    auto [minus, plus] = apa::mine_query_triplet(t.constant(f), prior, 0.4, 0.40, 0.55, &info);
    if (!info.minus_fallback) EXPECT_LT(oracle::max_abs_diff(minus.value(), masked_mean(f, neg)), 1e-6);
    if (!info.plus_fallback) EXPECT_LT(oracle::max_abs_diff(plus.value(), masked_mean(f, pos)), 1e-6);
  }
}

TEST(SupportTriplet, SingleForegroundPixel) {
  std::mt19937_64 rng(9);
  auto f = random_tensor<double>(Shape{4, 4, 3}, rng);
  Tensor<double> m(Shape{4, 4});
  m[6] = 1;
  Tape<double> t(false);
  auto [minus, plus] = apa::mine_support_triplet(t.constant(f), m, t.constant(random_tensor<double>(Shape{3}, rng)));
  EXPECT_EQ(plus.value().storage(), at(f, 6));
  std::vector<bool> bg(16, true);
  bg[6] = false;
  EXPECT_LT(oracle::max_abs_diff(minus.value(), masked_mean(f, bg)), 1e-12);
}

TEST(SupportTriplet, EquidistantForegroundTieBreaksToFirst) {
  // Points on a unit circle around the zero anchor: equal distances, distinct values.
  Tensor<double> g(Shape{3, 3, 2});
  for (std::size_t p = 0; p < 9; ++p) {
    g[p * 2] = std::cos(static_cast<double>(p));
    g[p * 2 + 1] = std::sin(static_cast<double>(p));
  }
  Tensor<double> m(Shape{3, 3});
  m[4] = m[5] = m[8] = 1;
  Tape<double> t(false);
  auto [minus, plus] = apa::mine_support_triplet(t.constant(g), m, t.constant(Tensor<double>(Shape{2})));
  EXPECT_EQ(plus.value().storage(), at(g, 4));
}

TEST(SupportTriplet, FarthestForegroundMatchesOracle) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    auto f = random_tensor<double>(Shape{4, 4, 3}, rng);
    auto m = random_mask<double>(4, 4, rng);
    m[0] = 1;
    m[15] = 0;
    auto anchor = random_tensor<double>(Shape{3}, rng);
    std::size_t best = 0;
    double best_d = -1;
    for (std::size_t p = 0; p < 16; ++p) {
      if (m[p] < 0.5) continue;
      double d = 0;
      for (std::size_t k = 0; k < 3; ++k) d += (f[p * 3 + k] - anchor[k]) * (f[p * 3 + k] - anchor[k]);
      if (d > best_d) {
        best_d = d;
        best = p;
      }
    }
    Tape<double> t(false);
    auto [minus, plus] = apa::mine_support_triplet(t.constant(f), m, t.constant(anchor));
    EXPECT_EQ(plus.value().storage(), at(f, best));
  }
}

TEST(SupportTriplet, MissingSideFallsBackToWholeMean) {
  std::mt19937_64 rng(11);
  auto f = random_tensor<double>(Shape{2, 2, 2}, rng);
  Tape<double> t(false);
  apa::TripletIndices info;
  auto [minus, plus] = apa::mine_support_triplet(t.constant(f), Tensor<double>(Shape{2, 2}, 1.0),
                                                 t.constant(Tensor<double>(Shape{2})), &info);
  EXPECT_TRUE(info.minus_fallback);
  EXPECT_LT(oracle::max_abs_diff(minus.value(), masked_mean(f, std::vector<bool>(4, true))), 1e-12);
}

Var<double> triplet_of(Tape<double>& t, const std::vector<Tensor<double>>& v) {
  return apa::co_triplet_loss(t.constant(v[0]), t.constant(v[1]), t.constant(v[2]), t.constant(v[3]),
                              t.constant(v[4]), t.constant(v[5]));
}

TEST(CoTriplet, SatisfiedMarginIsZeroAndCollapsedIsOne) {
  Tensor<double> a = Tensor<double>::vector({1, 2, 3});
  Tensor<double> far = Tensor<double>::vector({1, 2, 3.6});
  Tape<double> t(false);
  EXPECT_EQ(triplet_of(t, {a, a, far, a, a, far}).value().item(), 0.0);
  EXPECT_EQ(triplet_of(t, {a, a, a, a, a, a}).value().item(), 1.0);
}

TEST(CoTriplet, MatchesFormulaAndIsNonNegative) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Tensor<double>> v;
    for (int i = 0; i < 6; ++i) v.push_back(random_tensor<double>(Shape{6}, rng, -0.5, 0.5));
    Tape<double> t(false);
    const double got = triplet_of(t, v).value().item();
    const double ref = oracle::triplet(as_vector(v[0]), as_vector(v[1]), as_vector(v[2]), as_vector(v[3]),
                                       as_vector(v[4]), as_vector(v[5]));
    EXPECT_NEAR(got, ref, 1e-6);
    EXPECT_GE(got, 0.0);
  }
}

TEST(CoTriplet, GradientAwayFromKinks) {
  std::mt19937_64 rng(13);
  int checked = 0;
  while (checked < 20) {
    std::vector<Tensor<double>> v;
    for (int i = 0; i < 6; ++i) v.push_back(random_tensor<double>(Shape{5}, rng));
    auto d = [&](int a, int b) {
      return oracle::norm([&] {
        std::vector<double> x(5);
        for (int i = 0; i < 5; ++i) x[i] = v[a][i] - v[b][i];
        return x;
      }());
    };
    // Both hinges active with margin to spare and all norms above 0.1.
    const double hq = d(0, 1) + 0.5 - d(0, 2), hs = d(3, 4) + 0.5 - d(3, 5);
    if (hq < 0.05 || hs < 0.05 || d(0, 1) < 0.1 || d(0, 2) < 0.1 || d(3, 4) < 0.1 || d(3, 5) < 0.1) continue;
    ++checked;
    auto r = gradcheck::check([](Tape<double>&, const std::vector<Var<double>>& x) {
      return apa::co_triplet_loss(x[0], x[1], x[2], x[3], x[4], x[5]);
    }, v);
    EXPECT_TRUE(r.ok()) << r.worst << " " << r.where;
  }
}

TEST(CoTriplet, SelectionMasksAreGradientStops) {
  // Gradients reach the features only at the selected positions.
  std::mt19937_64 rng(14);
  auto f = random_tensor<double>(Shape{3, 3, 2}, rng);
  Tensor<double> prior(Shape{3, 3}, 0.9);
  prior[2] = 0.1;
  prior[4] = 0.5;
  Tape<double> t;
  auto fv = t.variable(f);
  auto [minus, plus] = apa::mine_query_triplet(fv, prior, 0.4, 0.40, 0.55);
  t.backward(ag::add(ag::sum(minus), ag::sum(plus)));
  auto g = t.grad(fv);
  for (std::size_t p = 0; p < 9; ++p) {
    const bool selected = p == 2 || p == 4;
    EXPECT_EQ(g[p * 2] != 0.0, selected) << p;
  }
}

TEST(Symmetry, TiedBranchesSwapWithSwappedInputs) {
  Config cfg = fixtures::tiny_config();
  cfg.share_align_params = true;
  Model<double> model(cfg);
  auto data = fixtures::memory_dataset(4, 4, cfg.image_size, 5, cfg.d_text);
  const auto& cls = data.cls(0);
  const std::size_t h = cfg.feature_size();
  auto img = [&](std::size_t i) { return image_to_tensor<double>(cls.images[i]); };
  auto mask = [&](std::size_t i) { return mask_to_tensor<double>(cls.masks[i]); };
  auto text = data.text().embed(0);

  auto run = [&](std::size_t s, std::size_t q) {
    EpisodeInput<double> ep{{img(s)}, {mask(s)}, img(q), mask(q), text};
    ForwardOptions<double> fo;
    fo.fixed_prior = apa::feature_mask(mask(q), h, h);
    fo.compute_loss = false;
    Tape<double> t(false);
    auto r = model.forward(t, ep, fo);
    return r.prototypes.detach();
  };
  auto a = run(0, 1), b = run(1, 0);
  EXPECT_LT(oracle::max_abs_diff(a.p_s_aug, b.p_q_aug), 1e-6);
  EXPECT_LT(oracle::max_abs_diff(a.p_q_aug, b.p_s_aug), 1e-6);
}

}  // namespace
