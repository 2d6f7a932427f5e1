#include "symnet/params.hpp"

#include <cmath>

namespace symnet {

template <typename T>
Parameter<T>& ParamStore<T>::add(const std::string& name, Tensor<T> value, bool trainable) {
  require(!params_.count(name), "duplicate parameter name " + name);
  auto p = std::make_unique<Parameter<T>>();
  p->name = name;
  p->grad = Tensor<T>(value.shape());
  p->value = std::move(value);
  p->trainable = trainable;
  auto& ref = *p;
  params_.emplace(name, std::move(p));
  return ref;
}

template <typename T>
Parameter<T>& ParamStore<T>::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw NotFound("no parameter named " + name);
  return *it->second;
}

template <typename T>
const Parameter<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw NotFound("no parameter named " + name);
  return *it->second;
}

template <typename T>
std::size_t ParamStore<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_)
    if (p->trainable) n += p->value.size();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [name, p] : params_) p->zero_grad();
}

namespace {

template <typename T>
Tensor<T> normal(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) {
    std::normal_distribution<double> dist(0.0, stddev);
    v = static_cast<T>(dist(rng));
  }
  return t;
}

}  // namespace

template <typename T>
ConvParams<T> make_conv(ParamStore<T>& store, const std::string& prefix, ConvSpec spec,
                        std::mt19937_64& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(spec.k * spec.k * spec.cin));
  ConvParams<T> p;
  p.w = &store.add(prefix + ".w", normal<T>(Shape{spec.k, spec.k, spec.cin, spec.cout}, stddev, rng));
  p.b = &store.add(prefix + ".b", Tensor<T>(Shape{spec.cout}));
  return p;
}

template <typename T>
LinearParams<T> make_linear(ParamStore<T>& store, const std::string& prefix, std::size_t in,
                            std::size_t out, std::mt19937_64& rng) {
  const double stddev = std::sqrt(1.0 / static_cast<double>(in));
  LinearParams<T> p;
  p.w = &store.add(prefix + ".w", normal<T>(Shape{in, out}, stddev, rng));
  p.b = &store.add(prefix + ".b", Tensor<T>(Shape{out}));
  return p;
}

template class ParamStore<float>;
template class ParamStore<double>;
template ConvParams<float> make_conv(ParamStore<float>&, const std::string&, ConvSpec, std::mt19937_64&);
template ConvParams<double> make_conv(ParamStore<double>&, const std::string&, ConvSpec, std::mt19937_64&);
template LinearParams<float> make_linear(ParamStore<float>&, const std::string&, std::size_t,
                                         std::size_t, std::mt19937_64&);
template LinearParams<double> make_linear(ParamStore<double>&, const std::string&, std::size_t,
                                          std::size_t, std::mt19937_64&);

}  // namespace symnet
