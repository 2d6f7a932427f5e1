#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "symnet/autograd.hpp"

namespace symnet {

// Owns every named parameter of a model. Names are unique; iteration order
// is lexicographic so serialization is stable.
template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> value, bool trainable = true);
  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  std::size_t trainable_count() const;

  template <typename F>
  void for_each(F&& f) {
    for (auto& [name, p] : params_) f(*p);
  }
  template <typename F>
  void for_each(F&& f) const {
    for (const auto& [name, p] : params_) f(static_cast<const Parameter<T>&>(*p));
  }

  void zero_grad();

 private:
  std::map<std::string, std::unique_ptr<Parameter<T>>> params_;
};

// He-normal conv kernel (k x k x cin x cout) plus zero bias, registered as
// `<prefix>.w` / `<prefix>.b`.
struct ConvSpec {
  std::size_t k, cin, cout;
};

template <typename T>
struct ConvParams {
  Parameter<T>* w = nullptr;
  Parameter<T>* b = nullptr;
};

template <typename T>
ConvParams<T> make_conv(ParamStore<T>& store, const std::string& prefix, ConvSpec spec,
                        std::mt19937_64& rng);

template <typename T>
struct LinearParams {
  Parameter<T>* w = nullptr;
  Parameter<T>* b = nullptr;
};

template <typename T>
LinearParams<T> make_linear(ParamStore<T>& store, const std::string& prefix, std::size_t in,
                            std::size_t out, std::mt19937_64& rng);

template <typename T>
Var<T> apply(Tape<T>& tape, const ConvParams<T>& p, const Var<T>& x) {
  return ag::conv2d(x, tape.parameter(*p.w), tape.parameter(*p.b));
}

template <typename T>
Var<T> apply(Tape<T>& tape, const LinearParams<T>& p, const Var<T>& x) {
  return ag::linear(x, tape.parameter(*p.w), tape.parameter(*p.b));
}

}  // namespace symnet
