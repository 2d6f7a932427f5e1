#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace symnet {

enum class Precision { kF32, kF64 };
enum class ActivationKernel { kInnerProduct, kL2 };
enum class CorrReduceMode { kMax, kMean };

// Every hyper-parameter of the model and of the episodic harness. Serialized
// as flat JSON; keys are listed in config.cpp. Values quoted in comments are
// the full-scale settings the desk-scale defaults stand in for.
struct Config {
  // Encoder. Full scale uses a ResNet50 backbone at 473x473.
  std::size_t image_size = 64;
  std::size_t stem_stride = 4;
  std::size_t c_low = 32;
  std::size_t c_mid = 64;
  std::size_t c_high = 128;
  std::size_t n1 = 3;
  std::size_t n2 = 6;
  std::size_t n3 = 4;
  std::size_t d_text = 300;
  bool freeze_backbone = false;

  // Prior mask.
  std::vector<std::pair<std::size_t, std::size_t>> windows{{5, 5}, {7, 1}, {1, 7}};
  ActivationKernel activation_kernel = ActivationKernel::kInnerProduct;

  // Prototype aggregation.
  double alpha = 0.5;
  double beta = 0.5;
  double tau1 = 0.7;
  double tau2 = 0.4;
  double tau3 = 0.40;
  double tau4 = 0.55;
  double d_scale = 256.0;
  std::size_t ffn_mult = 4;
  bool share_align_params = false;

  // Hyper-correlation.
  std::size_t n_prime = 48;
  CorrReduceMode corr_reduce = CorrReduceMode::kMax;

  // Fusion decoder.
  std::size_t decoder_width = 64;

  // Ablation switches.
  bool use_spm = true;
  bool use_apa = true;
  bool use_tdc = true;

  // Optimisation (full scale: lr 0.005, momentum 0.9, weight decay 1e-4).
  double lr = 0.005;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  // Global L2 gradient-norm ceiling applied before the momentum update;
  // 0 disables. Without it the randomly initialised, normalisation-free
  // encoder diverges at lr 0.005 within a few dozen steps.
  double grad_clip = 5.0;
  std::size_t steps = 1000;
  std::size_t batch = 1;
  std::size_t k_shot = 1;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;
  Precision precision = Precision::kF32;

  // Data.
  std::string data_dir;
  std::size_t n_folds = 4;
  std::size_t test_fold = 0;

  std::size_t feature_size() const { return image_size / stem_stride; }
  std::size_t n_total() const { return n1 + n2 + n3; }

  // Raises InvalidConfig on any inconsistent or out-of-range value.
  void validate() const;

  std::string to_json() const;
  // Unknown keys are rejected; missing keys keep their defaults.
  static Config from_json(const std::string& text);
  static Config load(const std::string& path);
};

}  // namespace symnet
