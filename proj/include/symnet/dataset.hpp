#pragma once

// Synthetic few-shot segmentation data: per-class shape and colour
// distributions rendered to PPM/PGM pairs, class folds and episode sampling.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "symnet/encoder.hpp"
#include "symnet/image_io.hpp"
#include "symnet/model.hpp"

namespace symnet {

enum class ShapeFamily { kEllipse, kRectangle, kTriangle, kRing, kCross, kBlob };

const char* family_name(ShapeFamily f);

struct SyntheticClass {
  std::string name;
  ShapeFamily family = ShapeFamily::kEllipse;
  double rgb[3] = {0, 0, 0};  // mean object colour in [0, 1]
  double color_jitter = 0.06;
  double scale_min = 0.14, scale_max = 0.26;  // radius as a fraction of the image side
  double rotation_range = 3.14159265358979;   // uniform in [-range, range]
  std::uint64_t texture_seed = 0;             // stripe pattern and blob harmonics
};

// Deterministic class catalogue: families cycle, hues are spread by the
// golden ratio so every pair differs in family or colour.
std::vector<SyntheticClass> synthetic_classes(std::size_t n_classes, std::uint64_t seed);

struct GeneratorOptions {
  std::size_t n_classes = 20;
  std::size_t per_class = 40;
  std::size_t resolution = 64;
  std::uint64_t seed = 1;
  std::size_t stride = 4;           // resolution must be divisible by this
  double distractor_prob = 0.5;     // chance of an extra object from another class
  double min_foreground = 0.01;
  double max_foreground = 0.60;
};

struct GeneratedSample {
  ImageU8 image;
  ImageU8 mask;  // 0 / 255
};

// One rendered image of class `cls`; distractors come from `catalogue`.
GeneratedSample render_sample(const SyntheticClass& cls, const std::vector<SyntheticClass>& catalogue,
                              const GeneratorOptions& opts, std::mt19937_64& rng);

// Writes <out>/manifest.json, <out>/embeddings.txt and one directory of
// image/mask pairs per class. Same options -> byte-identical output.
void generate_synthetic_dataset(const std::string& out_dir, const GeneratorOptions& opts);

struct ClassData {
  std::string name;
  std::vector<ImageU8> images;
  std::vector<ImageU8> masks;
};

class Dataset {
 public:
  static Dataset load(const std::string& dir);

  std::size_t n_classes() const { return classes_.size(); }
  std::size_t resolution() const { return resolution_; }
  const ClassData& cls(std::size_t id) const;
  const TextEmbeddingTable<double>& text() const { return text_; }

  // Builds an in-memory dataset (tests).
  Dataset(std::vector<ClassData> classes, TextEmbeddingTable<double> text, std::size_t resolution);

 private:
  Dataset() = default;
  std::vector<ClassData> classes_;
  TextEmbeddingTable<double> text_;
  std::size_t resolution_ = 0;
};

// Classes are split into n_folds contiguous blocks of equal size; the test
// fold is held out and training draws from the rest.
struct SplitConfig {
  std::size_t n_classes = 20;
  std::size_t n_folds = 4;
  std::size_t test_fold = 0;

  void validate() const;  // InvalidConfig on uneven or out-of-range folds
  std::vector<std::size_t> fold_classes(std::size_t fold) const;
  std::vector<std::size_t> test_classes() const { return fold_classes(test_fold); }
  std::vector<std::size_t> train_classes() const;
};

enum class SplitMode { kTrain, kTest };

template <typename T>
struct Episode {
  EpisodeInput<T> input;
  std::size_t class_id = 0;
  std::size_t query_index = 0;
  std::vector<std::size_t> support_indices;
};

// Uniform class from the mode's pool, then K supports and one query drawn
// without replacement. InvalidConfig when a class has fewer than K + 1 images.
template <typename T>
Episode<T> sample_episode(const Dataset& data, const SplitConfig& split, SplitMode mode,
                          std::size_t k_shot, std::mt19937_64& rng);

}  // namespace symnet
