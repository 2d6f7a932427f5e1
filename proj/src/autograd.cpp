#include "symnet/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "symnet/kernels.hpp"

namespace symnet {

namespace {

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

template <typename T>
Tape<T>* same_tape(const std::vector<Var<T>>& xs, const char* op) {
  require(!xs.empty(), std::string(op) + ": no operands");
  Tape<T>* t = xs.front().tape();
  for (const auto& x : xs) {
    require(x.valid(), std::string(op) + ": unbound operand");
    require(x.tape() == t, std::string(op) + ": operands live on different tapes");
  }
  return t;
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

}  // namespace

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  check_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  check_finite(value, "variable");
  nodes_.push_back(Node{std::move(value), {}, grad_enabled_, {}, nullptr});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var<T>(this, it->second);
  check_finite(p.value, p.name.c_str());
  nodes_.push_back(Node{p.value, {}, grad_enabled_ && p.trainable, {}, &p});
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, const std::vector<Var<T>>& parents, BackwardFn fn,
                     const char* op) {
  check_finite(value, op);
  bool needs = false;
  if (grad_enabled_) {
    for (const auto& p : parents) needs = needs || requires_grad(p.id());
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}, nullptr});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
void Tape<T>::accumulate(std::size_t id, const Tensor<T>& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    n.grad = g;
  } else {
    add_into(n.grad, g);
  }
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (consumed_) throw StateError("backward called twice on the same tape; re-run the forward pass");
  require(loss.tape() == this, "backward: loss does not belong to this tape");
  require(loss.value().size() == 1, "backward: loss must be a scalar, got " + shape_str(loss.shape()));
  if (!nodes_[loss.id()].requires_grad) {
    throw StateError("backward: loss is detached from every gradient-tracking input");
  }
  consumed_ = true;
  nodes_[loss.id()].grad = Tensor<T>(loss.shape(), T(1));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    check_finite(n.grad, "backward");
    n.backward(*this, n.grad);
  }
  for (auto& n : nodes_) {
    if (n.param == nullptr || !n.requires_grad || n.grad.empty()) continue;
    if (n.param->grad.shape() != n.param->value.shape()) n.param->zero_grad();
    add_into(n.param->grad, n.grad);
  }
}

template <typename T>
Tensor<T> Tape<T>::grad(const Var<T>& v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.empty()) return Tensor<T>(n.value.shape());
  return n.grad;
}

template class Tape<float>;
template class Tape<double>;

namespace ag {

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tape<T>* t = same_tape<T>({a, b}, "add");
  require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  add_into(out, b.value());
  const auto ia = a.id(), ib = b.id();
  return t->push(std::move(out), {a, b}, [ia, ib](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  }, "add");
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  Tape<T>* t = same_tape<T>({a, b}, "sub");
  require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const auto ia = a.id(), ib = b.id();
  return t->push(std::move(out), {a, b}, [ia, ib](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(ia, g);
    Tensor<T> ng = g;
    for (auto& v : ng.storage()) v = -v;
    tp.accumulate(ib, ng);
  }, "sub");
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Tape<T>* t = same_tape<T>({a, b}, "mul");
  require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const auto ia = a.id(), ib = b.id();
  return t->push(std::move(out), {a, b}, [ia, ib](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> ga = g, gb = g;
    const auto& va = tp.value(ia);
    const auto& vb = tp.value(ib);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] *= vb[i];
      gb[i] *= va[i];
    }
    tp.accumulate(ia, ga);
    tp.accumulate(ib, gb);
  }, "mul");
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tape<T>* t = same_tape<T>({a}, "scale");
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= s;
  const auto ia = a.id();
  return t->push(std::move(out), {a}, [ia, s](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> ga = g;
    for (auto& v : ga.storage()) v *= s;
    tp.accumulate(ia, ga);
  }, "scale");
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tape<T>* t = same_tape<T>({a}, "relu");
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
  const auto ia = a.id();
  return t->push(std::move(out), {a}, [ia](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> ga = g;
    const auto& x = tp.value(ia);
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (!(x[i] > T(0))) ga[i] = T(0);
    tp.accumulate(ia, ga);
  }, "relu");
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  Tape<T>* t = same_tape<T>({a}, "sum");
  T s = 0;
  for (T v : a.value().storage()) s += v;
  const auto ia = a.id();
  const Shape shape = a.shape();
  return t->push(Tensor<T>::scalar(s), {a}, [ia, shape](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(ia, Tensor<T>(shape, g[0]));
  }, "sum");
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tape<T>* t = same_tape<T>({a}, "reshape");
  const auto ia = a.id();
  const Shape in_shape = a.shape();
  return t->push(a.value().reshaped(std::move(shape)), {a},
                 [ia, in_shape](Tape<T>& tp, const Tensor<T>& g) {
                   tp.accumulate(ia, g.reshaped(in_shape));
                 }, "reshape");
}

template <typename T>
Var<T> mean_of(const std::vector<Var<T>>& xs) {
  Tape<T>* t = same_tape<T>(xs, "mean_of");
  for (const auto& x : xs) require_same_shape(xs.front(), x, "mean_of");
  if (xs.size() == 1) return xs.front();
  Tensor<T> out = xs.front().value();
  for (std::size_t k = 1; k < xs.size(); ++k) add_into(out, xs[k].value());
  const T inv = T(1) / static_cast<T>(xs.size());
  for (auto& v : out.storage()) v *= inv;
  std::vector<std::size_t> ids;
  for (const auto& x : xs) ids.push_back(x.id());
  return t->push(std::move(out), xs, [ids, inv](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> gs = g;
    for (auto& v : gs.storage()) v *= inv;
    for (auto id : ids) tp.accumulate(id, gs);
  }, "mean_of");
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool ta, bool tb) {
  Tape<T>* t = same_tape<T>({a, b}, "matmul");
  Tensor<T> out = kernels::matmul(a.value(), b.value(), ta, tb);
  const auto ia = a.id(), ib = b.id();
  return t->push(std::move(out), {a, b}, [ia, ib, ta, tb](Tape<T>& tp, const Tensor<T>& g) {
    const auto& va = tp.value(ia);
    const auto& vb = tp.value(ib);
    // C = op(A) op(B); dA and dB follow from the four transpose cases.
    if (tp.requires_grad(ia)) {
      Tensor<T> ga = ta ? kernels::matmul(vb, g, tb, true) : kernels::matmul(g, vb, false, !tb);
      tp.accumulate(ia, ga);
    }
    if (tp.requires_grad(ib)) {
      Tensor<T> gb = tb ? kernels::matmul(g, va, true, ta) : kernels::matmul(va, g, !ta, false);
      tp.accumulate(ib, gb);
    }
  }, "matmul");
}

template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
  Tape<T>* t = same_tape<T>({x, bias}, "add_bias");
  const std::size_t c = x.shape().back();
  require(bias.value().size() == c, "add_bias: bias length must equal trailing dimension");
  Tensor<T> out = x.value();
  const std::size_t rows = out.size() / c;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] += bias.value()[j];
  const auto ix = x.id(), ib = bias.id();
  const Shape bshape = bias.shape();
  return t->push(std::move(out), {x, bias}, [ix, ib, c, rows, bshape](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(ix, g);
    if (tp.requires_grad(ib)) {
      Tensor<T> gb(bshape);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
      tp.accumulate(ib, gb);
    }
  }, "add_bias");
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  return add_bias(matmul(x, w), b);
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs) {
  Tape<T>* t = same_tape<T>(xs, "concat");
  if (xs.size() == 1) return xs.front();
  Shape lead = xs.front().shape();
  lead.pop_back();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& x : xs) {
    Shape l = x.shape();
    widths.push_back(l.back());
    total += l.back();
    l.pop_back();
    require(l == lead, "concat: leading dimensions differ");
  }
  const std::size_t rows = shape_numel(lead.empty() ? Shape{1} : lead);
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor<T> out(out_shape);
  std::size_t off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const T* src = xs[k].value().data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(src + r * widths[k], src + (r + 1) * widths[k], out.data() + r * total + off);
    off += widths[k];
  }
  std::vector<std::size_t> ids;
  std::vector<Shape> shapes;
  for (const auto& x : xs) {
    ids.push_back(x.id());
    shapes.push_back(x.shape());
  }
  return t->push(std::move(out), xs, [ids, shapes, widths, rows, total](Tape<T>& tp, const Tensor<T>& g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(ids[k])) {
        Tensor<T> gk(shapes[k]);
        for (std::size_t r = 0; r < rows; ++r)
          std::copy(g.data() + r * total + off, g.data() + r * total + off + widths[k],
                    gk.data() + r * widths[k]);
        tp.accumulate(ids[k], gk);
      }
      off += widths[k];
    }
  }, "concat");
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias) {
  Tape<T>* t = same_tape<T>({x, kernel, bias}, "conv2d");
  Tensor<T> out = kernels::conv2d(x.value(), kernel.value(), bias.value());
  const auto ix = x.id(), ik = kernel.id(), ib = bias.id();
  return t->push(std::move(out), {x, kernel, bias}, [ix, ik, ib](Tape<T>& tp, const Tensor<T>& g) {
    auto grads = kernels::conv2d_backward(tp.value(ix), tp.value(ik), g, tp.requires_grad(ix));
    if (tp.requires_grad(ix)) tp.accumulate(ix, grads.dx);
    tp.accumulate(ik, grads.dkernel);
    tp.accumulate(ib, grads.dbias.reshaped(tp.value(ib).shape()));
  }, "conv2d");
}

template <typename T>
Var<T> avg_pool(const Var<T>& x, std::size_t dh, std::size_t dw) {
  Tape<T>* t = same_tape<T>({x}, "avg_pool");
  const auto ix = x.id();
  return t->push(kernels::avg_pool(x.value(), dh, dw), {x}, [ix, dh, dw](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(ix, kernels::avg_pool_backward(g, dh, dw));
  }, "avg_pool");
}

template <typename T>
Var<T> adaptive_avg_pool(const Var<T>& x, std::size_t oh, std::size_t ow) {
  Tape<T>* t = same_tape<T>({x}, "adaptive_avg_pool");
  const auto ix = x.id();
  const std::size_t h = x.shape()[0], w = x.shape()[1];
  return t->push(kernels::adaptive_avg_pool(x.value(), oh, ow), {x}, [ix, h, w](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(ix, kernels::adaptive_avg_pool_backward(g, h, w));
  }, "adaptive_avg_pool");
}

template <typename T>
Var<T> bilinear_resize(const Var<T>& x, std::size_t oh, std::size_t ow) {
  Tape<T>* t = same_tape<T>({x}, "bilinear_resize");
  const auto ix = x.id();
  const Shape in_shape = x.shape();
  return t->push(kernels::bilinear_resize(x.value(), oh, ow), {x}, [ix, in_shape](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(ix, kernels::bilinear_resize_backward(g, in_shape));
  }, "bilinear_resize");
}

template <typename T>
Var<T> space_to_depth(const Var<T>& x, std::size_t f) {
  Tape<T>* t = same_tape<T>({x}, "space_to_depth");
  const auto ix = x.id();
  return t->push(kernels::space_to_depth(x.value(), f), {x}, [ix, f](Tape<T>& tp, const Tensor<T>& g) {
    tp.accumulate(ix, kernels::depth_to_space(g, f));
  }, "space_to_depth");
}

template <typename T>
Var<T> softmax(const Var<T>& x) {
  Tape<T>* t = same_tape<T>({x}, "softmax");
  Tensor<T> out(x.shape(), kernels::softmax<T>(x.value().values()));
  const auto ix = x.id();
  const std::size_t iy = t->size();
  return t->push(std::move(out), {x}, [ix, iy](Tape<T>& tp, const Tensor<T>& g) {
    const auto& s = tp.value(iy);
    T gs = 0;
    for (std::size_t i = 0; i < g.size(); ++i) gs += g[i] * s[i];
    Tensor<T> gx(s.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = s[i] * (g[i] - gs);
    tp.accumulate(ix, gx);
  }, "softmax");
}

template <typename T>
Var<T> cosine(const Var<T>& a, const Var<T>& b) {
  Tape<T>* t = same_tape<T>({a, b}, "cosine");
  require(a.value().size() == b.value().size(), "cosine: length mismatch");
  const T c = kernels::cosine<T>(a.value().values(), b.value().values());
  const auto ia = a.id(), ib = b.id();
  return t->push(Tensor<T>::scalar(c), {a, b}, [ia, ib, c](Tape<T>& tp, const Tensor<T>& g) {
    const auto& va = tp.value(ia);
    const auto& vb = tp.value(ib);
    const T na = kernels::l2_norm<T>(va.values()), nb = kernels::l2_norm<T>(vb.values());
    if (na < eps_norm<T>() || nb < eps_norm<T>()) return;
    Tensor<T> ga(va.shape()), gb(vb.shape());
    for (std::size_t i = 0; i < va.size(); ++i) {
      ga[i] = g[0] * (vb[i] / (na * nb) - c * va[i] / (na * na));
      gb[i] = g[0] * (va[i] / (na * nb) - c * vb[i] / (nb * nb));
    }
    tp.accumulate(ia, ga);
    tp.accumulate(ib, gb);
  }, "cosine");
}

template <typename T>
Var<T> l2_norm(const Var<T>& a) {
  Tape<T>* t = same_tape<T>({a}, "l2_norm");
  const T n = kernels::l2_norm<T>(a.value().values());
  const auto ia = a.id();
  return t->push(Tensor<T>::scalar(n), {a}, [ia, n](Tape<T>& tp, const Tensor<T>& g) {
    if (n < eps_norm<T>()) return;
    Tensor<T> ga = tp.value(ia);
    for (auto& v : ga.storage()) v *= g[0] / n;
    tp.accumulate(ia, ga);
  }, "l2_norm");
}

template <typename T>
Var<T> mul_map(const Var<T>& x, const Tensor<T>& map) {
  Tape<T>* t = same_tape<T>({x}, "mul_map");
  require(x.shape().size() == 3 && map.rank() == 2 && map.dim(0) == x.shape()[0] &&
              map.dim(1) == x.shape()[1],
          "mul_map: map must be H x W matching the feature map");
  const std::size_t c = x.shape()[2];
  Tensor<T> out = x.value();
  for (std::size_t p = 0; p < map.size(); ++p)
    for (std::size_t j = 0; j < c; ++j) out[p * c + j] *= map[p];
  const auto ix = x.id();
  return t->push(std::move(out), {x}, [ix, map, c](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> gx = g;
    for (std::size_t p = 0; p < map.size(); ++p)
      for (std::size_t j = 0; j < c; ++j) gx[p * c + j] *= map[p];
    tp.accumulate(ix, gx);
  }, "mul_map");
}

template <typename T>
Var<T> weighted_spatial_mean(const Var<T>& x, const Tensor<T>& weights) {
  Tape<T>* t = same_tape<T>({x}, "weighted_spatial_mean");
  require(x.shape().size() == 3 && weights.size() == x.shape()[0] * x.shape()[1],
          "weighted_spatial_mean: weights must cover every position");
  const std::size_t c = x.shape()[2];
  T wsum = 0;
  for (T w : weights.storage()) wsum += w;
  if (!(wsum > T(0))) throw EmptyForeground("weighted_spatial_mean: selection is empty");
  Tensor<T> out(Shape{c});
  const auto& xv = x.value();
  for (std::size_t p = 0; p < weights.size(); ++p) {
    if (weights[p] == T(0)) continue;
    for (std::size_t j = 0; j < c; ++j) out[j] += weights[p] * xv[p * c + j];
  }
  for (auto& v : out.storage()) v /= wsum;
  const auto ix = x.id();
  const Shape xs = x.shape();
  return t->push(std::move(out), {x}, [ix, xs, weights, wsum, c](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> gx(xs);
    for (std::size_t p = 0; p < weights.size(); ++p) {
      if (weights[p] == T(0)) continue;
      const T f = weights[p] / wsum;
      for (std::size_t j = 0; j < c; ++j) gx[p * c + j] = f * g[j];
    }
    tp.accumulate(ix, gx);
  }, "weighted_spatial_mean");
}

template <typename T>
Var<T> gather_position(const Var<T>& x, std::size_t index) {
  Tape<T>* t = same_tape<T>({x}, "gather_position");
  require(x.shape().size() == 3, "gather_position: expected H x W x C");
  const std::size_t c = x.shape()[2];
  require(index < x.shape()[0] * x.shape()[1], "gather_position: index out of range");
  const T* src = x.value().data() + index * c;
  Tensor<T> out(Shape{c}, std::vector<T>(src, src + c));
  const auto ix = x.id();
  const Shape xs = x.shape();
  return t->push(std::move(out), {x}, [ix, xs, index, c](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> gx(xs);
    std::copy(g.data(), g.data() + c, gx.data() + index * c);
    tp.accumulate(ix, gx);
  }, "gather_position");
}

template <typename T>
Var<T> broadcast_spatial(const Var<T>& v, std::size_t h, std::size_t w) {
  Tape<T>* t = same_tape<T>({v}, "broadcast_spatial");
  const std::size_t c = v.value().size();
  Tensor<T> out(Shape{h, w, c});
  for (std::size_t p = 0; p < h * w; ++p)
    std::copy(v.value().data(), v.value().data() + c, out.data() + p * c);
  const auto iv = v.id();
  const Shape vs = v.shape();
  return t->push(std::move(out), {v}, [iv, vs, c, h, w](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> gv(vs);
    for (std::size_t p = 0; p < h * w; ++p)
      for (std::size_t j = 0; j < c; ++j) gv[j] += g[p * c + j];
    tp.accumulate(iv, gv);
  }, "broadcast_spatial");
}

template <typename T>
Var<T> cross_entropy_2class(const Var<T>& logits, const Tensor<T>& target) {
  Tape<T>* t = same_tape<T>({logits}, "cross_entropy_2class");
  const Shape& ls = logits.shape();
  require(ls.size() == 3 && ls[2] == 2, "cross_entropy_2class: logits must be H x W x 2");
  require(target.size() == ls[0] * ls[1], "cross_entropy_2class: target must be H x W");
  require(kernels::is_binary(target), "cross_entropy_2class: target must be binary");
  const std::size_t n = target.size();
  const auto& l = logits.value();
  T total = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const T a = l[2 * p], b = l[2 * p + 1];
    const T m = std::max(a, b);
    const T lse = m + std::log(std::exp(a - m) + std::exp(b - m));
    total += lse - (target[p] > T(0.5) ? b : a);
  }
  const auto il = logits.id();
  return t->push(Tensor<T>::scalar(total / static_cast<T>(n)), {logits},
                 [il, target, n](Tape<T>& tp, const Tensor<T>& g) {
                   const auto& l = tp.value(il);
                   Tensor<T> gl(l.shape());
                   const T f = g[0] / static_cast<T>(n);
                   for (std::size_t p = 0; p < n; ++p) {
                     const T a = l[2 * p], b = l[2 * p + 1];
                     const T m = std::max(a, b);
                     const T ea = std::exp(a - m), eb = std::exp(b - m);
                     const T pa = ea / (ea + eb), pb = eb / (ea + eb);
                     const bool fg = target[p] > T(0.5);
                     gl[2 * p] = f * (pa - (fg ? T(0) : T(1)));
                     gl[2 * p + 1] = f * (pb - (fg ? T(1) : T(0)));
                   }
                   tp.accumulate(il, gl);
                 }, "cross_entropy_2class");
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Unit rows and their original norms; rows below eps_norm stay zero.
template <typename T>
void unit_rows(const Tensor<T>& x, std::size_t rows, std::size_t c, RowMat<T>& unit,
               std::vector<T>& norms) {
  unit.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(c));
  norms.assign(rows, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    std::span<const T> row(x.data() + r * c, c);
    const T n = kernels::l2_norm<T>(row);
    norms[r] = n;
    for (std::size_t j = 0; j < c; ++j)
      unit(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
          n < eps_norm<T>() ? T(0) : row[j] / n;
  }
}

}  // namespace

template <typename T>
Var<T> masked_cosine_correlation(const Var<T>& query, const Var<T>& support,
                                 const Tensor<T>& support_fg, CorrReduce reduce) {
  Tape<T>* t = same_tape<T>({query, support}, "masked_cosine_correlation");
  const Shape& qs = query.shape();
  const Shape& ss = support.shape();
  require(qs.size() == 3 && ss.size() == 3 && qs[2] == ss[2],
          "masked_cosine_correlation: feature maps must be H x W x C with equal C");
  require(support_fg.size() == ss[0] * ss[1], "masked_cosine_correlation: mask must cover support");
  const std::size_t nq = qs[0] * qs[1], ns = ss[0] * ss[1], c = qs[2];
  RowMat<T> qu, su;
  std::vector<T> qn, sn;
  unit_rows(query.value(), nq, c, qu, qn);
  unit_rows(support.value(), ns, c, su, sn);
  std::vector<std::size_t> fg;
  for (std::size_t j = 0; j < ns; ++j)
    if (support_fg[j] > T(0.5)) fg.push_back(j);
  const RowMat<T> cos = qu * su.transpose();
  // Contributing (i, j) pairs with their weight in output i; the backward
  // pass walks only these, which keeps the max reduction sparse.
  struct Term {
    std::size_t i, j;
    T weight, cos;
  };
  std::vector<Term> terms;
  Tensor<T> out(Shape{qs[0], qs[1], 1});
  if (!fg.empty()) {
    const T inv = T(1) / static_cast<T>(fg.size());
    for (std::size_t i = 0; i < nq; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      if (reduce == CorrReduce::kMax) {
        T best = T(0);
        std::size_t arg = ns;
        for (auto j : fg) {
          const T v = cos(ii, static_cast<Eigen::Index>(j));
          if (v > best) {
            best = v;
            arg = j;
          }
        }
        out[i] = best;
        if (arg < ns) terms.push_back({i, arg, T(1), best});
      } else {
        T acc = 0;
        for (auto j : fg) {
          const T v = cos(ii, static_cast<Eigen::Index>(j));
          if (v > T(0)) {
            acc += v;
            terms.push_back({i, j, inv, v});
          }
        }
        out[i] = acc * inv;
      }
    }
  }
  const auto iq = query.id(), is = support.id();
  const Shape qshape = qs, sshape = ss;
  return t->push(std::move(out), {query, support},
                 [iq, is, qshape, sshape, c, qu = std::move(qu), su = std::move(su),
                  qn = std::move(qn), sn = std::move(sn),
                  terms = std::move(terms)](Tape<T>& tp, const Tensor<T>& g) {
                   // d cos_ij / d q_i = (s^_j - cos_ij q^_i) / |q_i|, symmetric in s.
                   const bool need_q = tp.requires_grad(iq), need_s = tp.requires_grad(is);
                   Tensor<T> gq(qshape), gs(sshape);
                   for (const Term& tm : terms) {
                     const T gw = g[tm.i] * tm.weight;
                     if (gw == T(0)) continue;
                     const auto ii = static_cast<Eigen::Index>(tm.i);
                     const auto jj = static_cast<Eigen::Index>(tm.j);
                     if (need_q && qn[tm.i] >= eps_norm<T>()) {
                       const T f = gw / qn[tm.i];
                       T* dst = gq.data() + tm.i * c;
                       for (std::size_t k = 0; k < c; ++k) {
                         const auto kk = static_cast<Eigen::Index>(k);
                         dst[k] += f * (su(jj, kk) - tm.cos * qu(ii, kk));
                       }
                     }
                     if (need_s && sn[tm.j] >= eps_norm<T>()) {
                       const T f = gw / sn[tm.j];
                       T* dst = gs.data() + tm.j * c;
                       for (std::size_t k = 0; k < c; ++k) {
                         const auto kk = static_cast<Eigen::Index>(k);
                         dst[k] += f * (qu(ii, kk) - tm.cos * su(jj, kk));
                       }
                     }
                   }
                   if (need_q) tp.accumulate(iq, gq);
                   if (need_s) tp.accumulate(is, gs);
                 }, "masked_cosine_correlation");
}

#define SYMNET_INSTANTIATE(T)                                                                 \
  template Var<T> add(const Var<T>&, const Var<T>&);                                          \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                          \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                          \
  template Var<T> scale(const Var<T>&, T);                                                    \
  template Var<T> relu(const Var<T>&);                                                        \
  template Var<T> sum(const Var<T>&);                                                         \
  template Var<T> mean(const Var<T>&);                                                        \
  template Var<T> reshape(const Var<T>&, Shape);                                              \
  template Var<T> mean_of(const std::vector<Var<T>>&);                                        \
  template Var<T> matmul(const Var<T>&, const Var<T>&, bool, bool);                           \
  template Var<T> add_bias(const Var<T>&, const Var<T>&);                                     \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                        \
  template Var<T> concat(const std::vector<Var<T>>&);                                         \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&);                        \
  template Var<T> avg_pool(const Var<T>&, std::size_t, std::size_t);                          \
  template Var<T> adaptive_avg_pool(const Var<T>&, std::size_t, std::size_t);                 \
  template Var<T> bilinear_resize(const Var<T>&, std::size_t, std::size_t);                   \
  template Var<T> space_to_depth(const Var<T>&, std::size_t);                                 \
  template Var<T> softmax(const Var<T>&);                                                     \
  template Var<T> cosine(const Var<T>&, const Var<T>&);                                       \
  template Var<T> l2_norm(const Var<T>&);                                                     \
  template Var<T> mul_map(const Var<T>&, const Tensor<T>&);                                   \
  template Var<T> weighted_spatial_mean(const Var<T>&, const Tensor<T>&);                     \
  template Var<T> gather_position(const Var<T>&, std::size_t);                                \
  template Var<T> broadcast_spatial(const Var<T>&, std::size_t, std::size_t);                 \
  template Var<T> cross_entropy_2class(const Var<T>&, const Tensor<T>&);                      \
  template Var<T> masked_cosine_correlation(const Var<T>&, const Var<T>&, const Tensor<T>&,   \
                                            CorrReduce);

SYMNET_INSTANTIATE(float)
SYMNET_INSTANTIATE(double)

#undef SYMNET_INSTANTIATE

}  // namespace ag
}  // namespace symnet
