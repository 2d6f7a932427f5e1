#pragma once

// Every differentiable tape op with small input shapes, as finite-difference
// cases shared by the unit tests and the acceptance run.

#include <random>
#include <vector>

#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "symnet/autograd.hpp"

namespace op_cases {

using namespace symnet;
using fixtures::random_tensor;

struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  gradcheck::Fn fn;
};

inline std::vector<OpCase> all() {
  using gradcheck::weighted_sum;
  using V = std::vector<Var<double>>;
  using T = Tape<double>;
  const Tensor<double> map = [] {
    std::mt19937_64 rng(12);
    return random_tensor<double>(Shape{4, 3}, rng, 0.1, 1.0);
  }();
  const Tensor<double> fg(Shape{4, 3}, std::vector<double>{1, 0, 1, 0, 0, 1, 1, 0, 0, 0, 1, 0});
  const Tensor<double> target(Shape{4, 3}, std::vector<double>{1, 0, 0, 1, 1, 0, 1, 0, 1, 1, 0, 0});
  return {
      {"add", {{3, 2}, {3, 2}}, [](T& t, const V& v) { return weighted_sum(t, ag::add(v[0], v[1])); }},
      {"sub", {{3, 2}, {3, 2}}, [](T& t, const V& v) { return weighted_sum(t, ag::sub(v[0], v[1])); }},
      {"mul", {{3, 2}, {3, 2}}, [](T& t, const V& v) { return weighted_sum(t, ag::mul(v[0], v[1])); }},
      {"scale", {{4}}, [](T& t, const V& v) { return weighted_sum(t, ag::scale(v[0], -1.7)); }},
      {"relu", {{5, 2}}, [](T& t, const V& v) { return weighted_sum(t, ag::relu(v[0])); }},
      {"mean", {{3, 3}}, [](T&, const V& v) { return ag::mean(ag::mul(v[0], v[0])); }},
      {"reshape", {{2, 6}}, [](T& t, const V& v) { return weighted_sum(t, ag::reshape(v[0], Shape{3, 4})); }},
      {"mean_of", {{3}, {3}, {3}}, [](T& t, const V& v) { return weighted_sum(t, ag::mean_of(v)); }},
      {"matmul", {{3, 4}, {4, 2}}, [](T& t, const V& v) { return weighted_sum(t, ag::matmul(v[0], v[1])); }},
      {"matmul_ta", {{4, 3}, {4, 2}}, [](T& t, const V& v) { return weighted_sum(t, ag::matmul(v[0], v[1], true)); }},
      {"matmul_tb", {{3, 4}, {2, 4}}, [](T& t, const V& v) { return weighted_sum(t, ag::matmul(v[0], v[1], false, true)); }},
      {"linear", {{2, 3}, {3, 4}, {4}}, [](T& t, const V& v) { return weighted_sum(t, ag::linear(v[0], v[1], v[2])); }},
      {"concat", {{2, 2, 1}, {2, 2, 3}}, [](T& t, const V& v) { return weighted_sum(t, ag::concat(v)); }},
      {"conv1x1", {{4, 3, 2}, {1, 1, 2, 3}, {3}}, [](T& t, const V& v) { return weighted_sum(t, ag::conv2d(v[0], v[1], v[2])); }},
      {"conv3x3", {{4, 5, 2}, {3, 3, 2, 2}, {2}}, [](T& t, const V& v) { return weighted_sum(t, ag::conv2d(v[0], v[1], v[2])); }},
      {"avg_pool", {{5, 4, 2}}, [](T& t, const V& v) { return weighted_sum(t, ag::avg_pool(v[0], 3, 1)); }},
      {"adaptive_pool", {{8, 8, 2}}, [](T& t, const V& v) { return weighted_sum(t, ag::adaptive_avg_pool(v[0], 3, 2)); }},
      {"bilinear_up", {{3, 2, 2}}, [](T& t, const V& v) { return weighted_sum(t, ag::bilinear_resize(v[0], 5, 7)); }},
      {"bilinear_down", {{6, 5, 1}}, [](T& t, const V& v) { return weighted_sum(t, ag::bilinear_resize(v[0], 2, 3)); }},
      {"space_to_depth", {{4, 4, 2}}, [](T& t, const V& v) { return weighted_sum(t, ag::space_to_depth(v[0], 2)); }},
      {"softmax", {{6}}, [](T& t, const V& v) { return weighted_sum(t, ag::softmax(v[0])); }},
      {"cosine", {{5}, {5}}, [](T&, const V& v) { return ag::cosine(v[0], v[1]); }},
      {"l2_norm", {{5}}, [](T&, const V& v) { return ag::l2_norm(v[0]); }},
      {"mul_map", {{4, 3, 2}}, [map](T& t, const V& v) { return weighted_sum(t, ag::mul_map(v[0], map)); }},
      {"weighted_mean", {{4, 3, 2}}, [map](T& t, const V& v) { return weighted_sum(t, ag::weighted_spatial_mean(v[0], map)); }},
      {"gather", {{4, 3, 2}}, [](T& t, const V& v) { return weighted_sum(t, ag::gather_position(v[0], 7)); }},
      {"broadcast", {{3}}, [](T& t, const V& v) { return weighted_sum(t, ag::broadcast_spatial(v[0], 2, 3)); }},
      {"add_bias", {{4, 3, 2}, {2}}, [](T& t, const V& v) { return weighted_sum(t, ag::add_bias(v[0], v[1])); }},
      {"cross_entropy", {{4, 3, 2}}, [target](T&, const V& v) { return ag::cross_entropy_2class(v[0], target); }},
      {"corr_max", {{4, 3, 3}, {4, 3, 3}}, [fg](T& t, const V& v) {
         return weighted_sum(t, ag::masked_cosine_correlation(v[0], v[1], fg, ag::CorrReduce::kMax));
       }},
      {"corr_mean", {{4, 3, 3}, {4, 3, 3}}, [fg](T& t, const V& v) {
         return weighted_sum(t, ag::masked_cosine_correlation(v[0], v[1], fg, ag::CorrReduce::kMean));
       }},
  };
}

}  // namespace op_cases
