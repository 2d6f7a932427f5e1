#pragma once

// Episodic training (SGD with momentum and weight decay), seeded evaluation
// rounds and checkpoint round-trips of model plus optimizer state.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "symnet/checkpoint.hpp"
#include "symnet/dataset.hpp"
#include "symnet/metrics.hpp"
#include "symnet/model.hpp"

namespace symnet {

struct StepLog {
  std::uint64_t step = 0;
  std::vector<std::size_t> classes;
  double co_triplet = 0, inter_seg = 0, final_seg = 0, total = 0;
  std::size_t skipped = 0;  // episodes dropped for an empty feature-grid mask

  std::string to_json() const;
};

SplitConfig split_from(const Config& cfg, std::size_t n_classes);

template <typename T>
class Trainer {
 public:
  // The episode sampler is seeded from cfg.seed on a stream separate from
  // parameter initialization.
  explicit Trainer(Model<T>& model);

  // One optimizer step over cfg.batch freshly sampled training episodes.
  StepLog step(const Dataset& data, const SplitConfig& split);
  // One optimizer step over the given episodes (losses averaged).
  StepLog step_on(const std::vector<EpisodeInput<T>>& batch);

  std::uint64_t steps_done() const { return step_; }
  std::mt19937_64& rng() { return rng_; }
  Model<T>& model() { return model_; }

  // Episodes that produce a non-finite loss are written here before the
  // NumericError propagates.
  void set_dump_dir(std::string dir) { dump_dir_ = std::move(dir); }

  void write_state(Checkpoint& ck) const;
  void read_state(const Checkpoint& ck);

 private:
  double accumulate(const EpisodeInput<T>& ep, StepLog& log, std::size_t batch);
  void sgd_update();
  void dump_episode(const EpisodeInput<T>& ep, const std::string& why) const;

  Model<T>& model_;
  std::uint64_t step_ = 0;
  std::mt19937_64 rng_;
  std::map<std::string, Tensor<T>> velocity_;
  std::string dump_dir_;
};

// Parameters (and, when given, trainer state) with the config snapshot.
template <typename T>
Checkpoint make_checkpoint(const Model<T>& model, const Trainer<T>* trainer = nullptr);
// Copies parameters into `model` after validating every record first, so a
// failure leaves the model untouched.
template <typename T>
void load_parameters(Model<T>& model, const Checkpoint& ck);

struct TrainOptions {
  std::uint64_t steps = 0;
  std::string log_path;         // JSON lines, one per step; empty to skip
  std::string checkpoint_dir;   // periodic checkpoints; empty to skip
  std::uint64_t checkpoint_every = 0;
  std::function<void(const StepLog&)> on_step;
};

template <typename T>
void train(Trainer<T>& trainer, const Dataset& data, const SplitConfig& split, const TrainOptions& opts);

struct EvalOptions {
  std::size_t k_shot = 1;
  std::size_t rounds = 5;
  std::size_t episodes = 200;
  std::uint64_t seed = 1;  // round r uses seed + r
  std::string dump_dir;    // prior / prediction PGMs when non-empty
  std::size_t threads = 1;
};

struct EvalReport {
  std::vector<double> round_miou;
  double mean_miou = 0;
  std::map<std::size_t, double> per_class;  // mean over rounds
  std::vector<std::size_t> zero_denominator;
  std::size_t skipped = 0;

  std::string to_json(const Dataset* data = nullptr) const;
};

template <typename T>
EvalReport evaluate(const Model<T>& model, const Dataset& data, const SplitConfig& split,
                    const EvalOptions& opts);

// Prior mask and per-window maps of test episode `index` (drawn from a
// generator seeded with seed + index), resized to image resolution.
template <typename T>
spm::PriorMask<T> episode_prior(const Model<T>& model, const Dataset& data, const SplitConfig& split,
                                std::uint64_t index, std::uint64_t seed, std::size_t k_shot = 1);

}  // namespace symnet
