#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "symnet/config.hpp"
#include "symnet/dataset.hpp"
#include "symnet/encoder.hpp"
#include "symnet/tensor.hpp"

namespace fixtures {

template <typename T>
symnet::Tensor<T> random_tensor(symnet::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  symnet::Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(u(rng));
  return t;
}

template <typename T>
symnet::Tensor<T> random_mask(std::size_t h, std::size_t w, std::mt19937_64& rng, double p = 0.5) {
  std::bernoulli_distribution b(p);
  symnet::Tensor<T> m(symnet::Shape{h, w});
  for (auto& v : m.storage()) v = b(rng) ? T(1) : T(0);
  return m;
}

inline std::vector<double> as_vector(const auto& t) {
  std::vector<double> out;
  for (std::size_t i = 0; i < t.size(); ++i) out.push_back(static_cast<double>(t[i]));
  return out;
}

// A model small enough for exhaustive finite-difference checks: 32 x 32
// images, an 8 x 8 feature grid and single-digit channel widths.
inline symnet::Config tiny_config() {
  symnet::Config c;
  c.image_size = 32;
  c.stem_stride = 4;
  c.c_low = 4;
  c.c_mid = 6;
  c.c_high = 8;
  c.n1 = 1;
  c.n2 = 2;
  c.n3 = 1;
  c.d_text = 8;
  c.n_prime = 4;
  c.decoder_width = 4;
  c.ffn_mult = 2;
  c.d_scale = 16;
  c.precision = symnet::Precision::kF64;
  return c;
}

// In-memory synthetic dataset with its own random text table.
inline symnet::Dataset memory_dataset(std::size_t n_classes, std::size_t per_class, std::size_t resolution,
                                      std::uint64_t seed, std::size_t d_text) {
  symnet::GeneratorOptions g;
  g.n_classes = n_classes;
  g.per_class = per_class;
  g.resolution = resolution;
  g.seed = seed;
  const auto catalogue = symnet::synthetic_classes(n_classes, seed);
  std::vector<symnet::ClassData> classes;
  std::vector<std::string> names;
  std::mt19937_64 rng(seed);
  for (const auto& cls : catalogue) {
    symnet::ClassData cd;
    cd.name = cls.name;
    for (std::size_t i = 0; i < per_class; ++i) {
      auto s = symnet::render_sample(cls, catalogue, g, rng);
      cd.images.push_back(std::move(s.image));
      cd.masks.push_back(std::move(s.mask));
    }
    names.push_back(cls.name);
    classes.push_back(std::move(cd));
  }
  return symnet::Dataset(std::move(classes),
                         symnet::TextEmbeddingTable<double>::random(names, d_text, seed + 1), resolution);
}

}  // namespace fixtures
