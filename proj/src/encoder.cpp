#include "symnet/encoder.hpp"

#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace symnet {

namespace {

// Residual branches start small so activations stay bounded through the
// unnormalized stack.
constexpr double kResidualGain = 0.3;

template <typename T>
void scale_values(Parameter<T>& p, double gain) {
  for (auto& v : p.value.storage()) v = static_cast<T>(v * gain);
}

}  // namespace

template <typename T>
Encoder<T>::Encoder(const Config& cfg, ParamStore<T>& store, std::mt19937_64& rng)
    : image_size_(cfg.image_size), stride_(cfg.stem_stride) {
  const std::size_t stem_in = 3 * stride_ * stride_;
  stem_ = make_conv(store, "encoder.stem", {3, stem_in, cfg.c_low}, rng);
  auto add_stage = [&](std::vector<Block>& stage, const std::string& level, std::size_t count,
                       std::size_t cin, std::size_t cout) {
    for (std::size_t i = 0; i < count; ++i) {
      Block b;
      const std::string prefix = "encoder." + level + "." + std::to_string(i);
      const std::size_t in = i == 0 ? cin : cout;
      b.conv = make_conv(store, prefix + ".conv", {3, in, cout}, rng);
      scale_values(*b.conv.w, kResidualGain);
      if (in != cout) {
        b.proj = make_conv(store, prefix + ".proj", {1, in, cout}, rng);
        b.has_proj = true;
      }
      stage.push_back(b);
    }
  };
  add_stage(low_, "low", cfg.n1, cfg.c_low, cfg.c_low);
  add_stage(mid_, "mid", cfg.n2, cfg.c_low, cfg.c_mid);
  add_stage(high_, "high", cfg.n3, cfg.c_mid, cfg.c_high);
  store.for_each([&](Parameter<T>& p) {
    if (p.name.rfind("encoder.", 0) == 0) {
      names_.push_back(p.name);
      if (cfg.freeze_backbone) p.trainable = false;
    }
  });
}

template <typename T>
Var<T> Encoder<T>::run_block(Tape<T>& tape, const Block& b, const Var<T>& x) const {
  Var<T> y = apply(tape, b.conv, x);
  Var<T> skip = b.has_proj ? apply(tape, b.proj, x) : x;
  return ag::relu(ag::add(y, skip));
}

template <typename T>
FeaturePyramid<T> Encoder<T>::encode(Tape<T>& tape, const Tensor<T>& image) const {
  require(image.rank() == 3 && image.dim(2) == 3,
          "encode: image must be H x W x 3, got " + shape_str(image.shape()));
  require(image.dim(0) % stride_ == 0 && image.dim(1) % stride_ == 0,
          "encode: image extents must be divisible by the stem stride");
  Tensor<T> centred = image;
  for (auto& v : centred.storage()) v = (v - T(0.5)) * T(4);
  Var<T> x = ag::space_to_depth(tape.constant(std::move(centred)), stride_);
  x = ag::relu(apply(tape, stem_, x));
  FeaturePyramid<T> pyr;
  for (const auto& b : low_) {
    x = run_block(tape, b, x);
    pyr.low.push_back(x);
  }
  for (const auto& b : mid_) {
    x = run_block(tape, b, x);
    pyr.mid.push_back(x);
  }
  for (const auto& b : high_) {
    x = run_block(tape, b, x);
    pyr.high.push_back(x);
  }
  return pyr;
}

template <typename T>
TextEmbeddingTable<T> TextEmbeddingTable<T>::random(const std::vector<std::string>& class_names,
                                                    std::size_t dim, std::uint64_t seed) {
  TextEmbeddingTable table;
  std::mt19937_64 rng(seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
  for (const auto& name : class_names) {
    Tensor<T> row(Shape{dim});
    for (auto& v : row.storage()) {
      std::normal_distribution<double> dist(0.0, stddev);
      v = static_cast<T>(dist(rng));
    }
    table.add_row(name, std::move(row));
  }
  return table;
}

template <typename T>
void TextEmbeddingTable<T>::add_row(const std::string& name, Tensor<T> row) {
  require(!name.empty() && name.find_first_of(" \t\n") == std::string::npos,
          "embedding class names must be non-empty and whitespace-free");
  require(!index_.count(name), "duplicate embedding row " + name);
  if (rows_.empty()) dim_ = row.size();
  require(row.size() == dim_, "embedding row " + name + " has the wrong dimension");
  check_finite(row, "embedding row");
  index_.emplace(name, rows_.size());
  names_.push_back(name);
  rows_.push_back(std::move(row));
}

template <typename T>
TextEmbeddingTable<T> TextEmbeddingTable<T>::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding table " + path);
  TextEmbeddingTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string name;
    ls >> name;
    std::vector<T> vals;
    double v;
    while (ls >> v) vals.push_back(static_cast<T>(v));
    if (!ls.eof()) throw FormatError(path + ":" + std::to_string(lineno) + ": non-numeric value");
    if (vals.empty()) throw FormatError(path + ":" + std::to_string(lineno) + ": row has no values");
    try {
      table.add_row(name, Tensor<T>::vector(std::move(vals)));
    } catch (const InvalidArgument& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (table.size() == 0) throw FormatError(path + ": empty embedding table");
  return table;
}

template <typename T>
void TextEmbeddingTable<T>::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write embedding table " + path);
  out << std::setprecision(std::numeric_limits<T>::max_digits10);
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    out << names_[i];
    for (T v : rows_[i].storage()) out << ' ' << v;
    out << '\n';
  }
  if (!out) throw IoError("failed writing embedding table " + path);
}

template <typename T>
const Tensor<T>& TextEmbeddingTable<T>::embed(std::size_t class_id) const {
  if (class_id >= rows_.size()) {
    throw NotFound("class id " + std::to_string(class_id) + " is not in the embedding table");
  }
  return rows_[class_id];
}

template <typename T>
const Tensor<T>& TextEmbeddingTable<T>::embed(const std::string& class_name) const {
  auto it = index_.find(class_name);
  if (it == index_.end()) throw NotFound("class " + class_name + " is not in the embedding table");
  return rows_[it->second];
}

template class Encoder<float>;
template class Encoder<double>;
template class TextEmbeddingTable<float>;
template class TextEmbeddingTable<double>;

}  // namespace symnet
