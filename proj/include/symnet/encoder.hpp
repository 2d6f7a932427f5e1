#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "symnet/config.hpp"
#include "symnet/params.hpp"

namespace symnet {

// Low / mid / high feature blocks of one image, all at the same H x W.
template <typename T>
struct FeaturePyramid {
  std::vector<Var<T>> low;
  std::vector<Var<T>> mid;
  std::vector<Var<T>> high;

  const Var<T>& mid_features() const { return mid.back(); }
  const Var<T>& high_features() const { return high.back(); }
  std::size_t block_count() const { return low.size() + mid.size() + high.size(); }
};

// Weight-shared image encoder: a stride-s patchify stem followed by N1 + N2 +
// N3 residual 3x3 blocks. One instance serves both support and query images.
template <typename T>
class Encoder {
 public:
  Encoder(const Config& cfg, ParamStore<T>& store, std::mt19937_64& rng);

  // image: H_img x W_img x 3 with values in [0, 1].
  FeaturePyramid<T> encode(Tape<T>& tape, const Tensor<T>& image) const;

  const std::vector<std::string>& parameter_names() const { return names_; }

 private:
  struct Block {
    ConvParams<T> conv;
    ConvParams<T> proj;  // 1x1 skip projection when the width changes.
    bool has_proj = false;
  };

  Var<T> run_block(Tape<T>& tape, const Block& b, const Var<T>& x) const;

  std::size_t image_size_;
  std::size_t stride_;
  ConvParams<T> stem_;
  std::vector<Block> low_, mid_, high_;
  std::vector<std::string> names_;
};

// Frozen per-class text embeddings. Rows come from a table file
// (`<class_name> <d reals>` per line) or from a seeded random draw.
template <typename T>
class TextEmbeddingTable {
 public:
  TextEmbeddingTable() = default;
  static TextEmbeddingTable random(const std::vector<std::string>& class_names, std::size_t dim,
                                   std::uint64_t seed);
  static TextEmbeddingTable load(const std::string& path);

  void save(const std::string& path) const;

  // NotFound for an id outside the table.
  const Tensor<T>& embed(std::size_t class_id) const;
  const Tensor<T>& embed(const std::string& class_name) const;

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return rows_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  void add_row(const std::string& name, Tensor<T> row);

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace symnet
