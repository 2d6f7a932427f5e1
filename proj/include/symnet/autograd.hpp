#pragma once

// Tape-based reverse-mode differentiation over Tensor<T>.
//
// A Tape owns every value produced while it is live. Var is a cheap handle
// (tape pointer + node index). Parameters are bound to a tape once per tape;
// backward() accumulates leaf gradients into Parameter::grad.

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "symnet/tensor.hpp"

namespace symnet {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape<T>* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<T> constant(Tensor<T> value);
  // Leaf that receives a gradient, owned by the tape.
  Var<T> variable(Tensor<T> value);
  // Leaf bound to an external parameter; one node per parameter per tape.
  Var<T> parameter(Parameter<T>& p);

  // Records an op result. requires_grad is inherited from the parents; the
  // backward closure is dropped when no parent needs a gradient.
  Var<T> push(Tensor<T> value, const std::vector<Var<T>>& parents, BackwardFn fn,
              const char* op);

  void backward(const Var<T>& loss);

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient of a node after backward(); zeros when none reached it.
  Tensor<T> grad(const Var<T>& v) const;

  // Adds `g` into the gradient slot of node `id` if it tracks gradients.
  void accumulate(std::size_t id, const Tensor<T>& g);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
  bool grad_enabled_;
  bool consumed_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  require(tape_ != nullptr, "use of an unbound Var");
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_ != nullptr && tape_->requires_grad(id_);
}

// Differentiable operations. All operands must live on the same tape.
namespace ag {

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);
// Element-wise mean of same-shape operands.
template <typename T> Var<T> mean_of(const std::vector<Var<T>>& xs);

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool transpose_a = false,
              bool transpose_b = false);
// Adds a vector over the trailing dimension.
template <typename T> Var<T> add_bias(const Var<T>& x, const Var<T>& bias);
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);
// Concatenation along the trailing dimension.
template <typename T> Var<T> concat(const std::vector<Var<T>>& xs);

template <typename T> Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias);
template <typename T> Var<T> avg_pool(const Var<T>& x, std::size_t dh, std::size_t dw);
template <typename T> Var<T> adaptive_avg_pool(const Var<T>& x, std::size_t oh, std::size_t ow);
template <typename T> Var<T> bilinear_resize(const Var<T>& x, std::size_t oh, std::size_t ow);
template <typename T> Var<T> space_to_depth(const Var<T>& x, std::size_t f);

// Flat softmax over every element.
template <typename T> Var<T> softmax(const Var<T>& x);
template <typename T> Var<T> cosine(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> l2_norm(const Var<T>& a);

// x (H x W x C) scaled per position by a constant H x W map.
template <typename T> Var<T> mul_map(const Var<T>& x, const Tensor<T>& map);
// sum_i w_i x_i / sum_i w_i over positions; EmptyForeground when sum w == 0.
template <typename T> Var<T> weighted_spatial_mean(const Var<T>& x, const Tensor<T>& weights);
template <typename T> Var<T> gather_position(const Var<T>& x, std::size_t index);
template <typename T> Var<T> broadcast_spatial(const Var<T>& v, std::size_t h, std::size_t w);

// Mean over pixels of -log softmax(logits)[target]; logits H x W x 2,
// target H x W with entries in {0, 1}.
template <typename T> Var<T> cross_entropy_2class(const Var<T>& logits, const Tensor<T>& target);

enum class CorrReduce { kMax, kMean };

// corr(i) = reduce over support positions j with fg(j) == 1 of
// max(cos(q_i, s_j), 0). Output H x W x 1; empty foreground gives zeros.
template <typename T>
Var<T> masked_cosine_correlation(const Var<T>& query, const Var<T>& support,
                                 const Tensor<T>& support_fg, CorrReduce reduce);

}  // namespace ag
}  // namespace symnet
