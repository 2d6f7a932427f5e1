#include "symnet/harness.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "symnet/error.hpp"
#include "symnet/kernels.hpp"

namespace symnet {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::size_t kMaxResamples = 1000;

std::string padded(std::uint64_t v, int width) {
  std::ostringstream s;
  s << std::setw(width) << std::setfill('0') << v;
  return s.str();
}

template <typename T>
ImageU8 tensor_to_rgb(const Tensor<T>& img) {
  ImageU8 out{img.dim(0), img.dim(1), 3, std::vector<std::uint8_t>(img.size())};
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(static_cast<double>(img[i]), 0.0, 1.0);
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

}  // namespace

std::string StepLog::to_json() const {
  json j;
  j["step"] = step;
  j["classes"] = classes;
  j["l_co_triple"] = co_triplet;
  j["l_inter_seg"] = inter_seg;
  j["l_final_seg"] = final_seg;
  j["l_total"] = total;
  j["skipped"] = skipped;
  return j.dump();
}

SplitConfig split_from(const Config& cfg, std::size_t n_classes) {
  SplitConfig s{n_classes, cfg.n_folds, cfg.test_fold};
  s.validate();
  return s;
}

template <typename T>
Trainer<T>::Trainer(Model<T>& model) : model_(model) {
  const std::uint64_t seed = model.config().seed;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5eedu};
  rng_.seed(seq);
  model_.params().for_each([&](Parameter<T>& p) {
    if (p.trainable) velocity_.emplace(p.name, Tensor<T>(p.value.shape()));
  });
}

template <typename T>
void Trainer<T>::dump_episode(const EpisodeInput<T>& ep, const std::string& why) const {
  if (dump_dir_.empty()) return;
  const fs::path dir = fs::path(dump_dir_) / ("nan_step_" + padded(step_ + 1, 6));
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) return;
  for (std::size_t k = 0; k < ep.support_images.size(); ++k) {
    write_ppm((dir / ("support_" + std::to_string(k) + ".ppm")).string(), tensor_to_rgb(ep.support_images[k]));
    write_pgm((dir / ("support_" + std::to_string(k) + ".pgm")).string(), tensor_to_gray(ep.support_masks[k]));
  }
  write_ppm((dir / "query.ppm").string(), tensor_to_rgb(ep.query_image));
  if (!ep.query_mask.empty()) write_pgm((dir / "query.pgm").string(), tensor_to_gray(ep.query_mask));
  std::ofstream info(dir / "reason.txt");
  info << "step " << step_ + 1 << ": " << why << "\n";
}

template <typename T>
double Trainer<T>::accumulate(const EpisodeInput<T>& ep, StepLog& log, std::size_t batch) {
  require(!ep.query_mask.empty(), "training episodes need a query mask");
  Tape<T> tape;
  ForwardResult<T> r;
  try {
    r = model_.forward(tape, ep);
  } catch (const NumericError& e) {
    dump_episode(ep, e.what());
    throw NumericError(std::string(e.what()) + " (episode dumped under " + dump_dir_ + ")");
  }
  const double total = static_cast<double>(r.total.value().item());
  if (!std::isfinite(total)) {
    dump_episode(ep, "non-finite total loss");
    throw NumericError("non-finite loss at step " + std::to_string(step_ + 1) +
                       " (episode dumped under " + dump_dir_ + ")");
  }
  const double inv = 1.0 / static_cast<double>(batch);
  log.co_triplet += inv * static_cast<double>(r.co_triplet.value().item());
  log.inter_seg += inv * static_cast<double>(r.seg->inter.value().item());
  log.final_seg += inv * static_cast<double>(r.seg->final.value().item());
  log.total += inv * total;
  try {
    tape.backward(batch == 1 ? r.total : ag::scale(r.total, static_cast<T>(inv)));
  } catch (const NumericError& e) {
    dump_episode(ep, e.what());
    throw;
  }
  return total;
}

template <typename T>
void Trainer<T>::sgd_update() {
  const Config& cfg = model_.config();
  const T lr = static_cast<T>(cfg.lr), mu = static_cast<T>(cfg.momentum), wd = static_cast<T>(cfg.weight_decay);
  T scale = 1;
  if (cfg.grad_clip > 0) {
    double sq = 0;
    model_.params().for_each([&](Parameter<T>& p) {
      if (!p.trainable || p.grad.empty()) return;
      for (std::size_t i = 0; i < p.grad.size(); ++i) sq += double(p.grad[i]) * double(p.grad[i]);
    });
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) scale = static_cast<T>(cfg.grad_clip / norm);
  }
  model_.params().for_each([&](Parameter<T>& p) {
    if (!p.trainable) return;
    Tensor<T>& v = velocity_.at(p.name);
    if (p.grad.empty()) p.zero_grad();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T d = scale * p.grad[i] + wd * p.value[i];
      v[i] = mu * v[i] + d;
      p.value[i] -= lr * v[i];
    }
    if (!p.value.all_finite()) throw NumericError("sgd update produced non-finite values in " + p.name);
  });
}

template <typename T>
StepLog Trainer<T>::step(const Dataset& data, const SplitConfig& split) {
  const std::size_t batch = std::max<std::size_t>(1, model_.config().batch);
  StepLog log;
  log.step = step_ + 1;
  model_.params().zero_grad();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt == kMaxResamples) throw InvalidConfig("training: no episode with a usable support mask");
      auto ep = sample_episode<T>(data, split, SplitMode::kTrain, model_.config().k_shot, rng_);
      try {
        accumulate(ep.input, log, batch);
        log.classes.push_back(ep.class_id);
        break;
      } catch (const EmptyForeground&) {
        ++log.skipped;
      }
    }
  }
  sgd_update();
  ++step_;
  return log;
}

template <typename T>
StepLog Trainer<T>::step_on(const std::vector<EpisodeInput<T>>& batch) {
  require(!batch.empty(), "step_on: empty batch");
  StepLog log;
  log.step = step_ + 1;
  model_.params().zero_grad();
  for (const auto& ep : batch) accumulate(ep, log, batch.size());
  sgd_update();
  ++step_;
  return log;
}

template <typename T>
void Trainer<T>::write_state(Checkpoint& ck) const {
  ck.records.push_back(u64_record("trainer/step", step_));
  std::ostringstream rng_text;
  rng_text << rng_;
  ck.records.push_back(bytes_record("trainer/rng", rng_text.str()));
  for (const auto& [name, v] : velocity_) ck.records.push_back(tensor_record("velocity/" + name, v));
}

template <typename T>
void Trainer<T>::read_state(const Checkpoint& ck) {
  const std::uint64_t step = record_u64(ck.at("trainer/step"));
  std::mt19937_64 rng;
  std::istringstream rng_text(record_bytes(ck.at("trainer/rng")));
  rng_text >> rng;
  if (!rng_text) throw FormatError("checkpoint: unreadable trainer/rng state");
  std::map<std::string, Tensor<T>> velocity;
  for (const auto& [name, v] : velocity_) {
    Tensor<T> t = record_tensor<T>(ck.at("velocity/" + name));
    if (t.shape() != v.shape()) throw FormatError("checkpoint: velocity/" + name + " has the wrong shape");
    velocity.emplace(name, std::move(t));
  }
  step_ = step;
  rng_ = rng;
  velocity_ = std::move(velocity);
}

template <typename T>
Checkpoint make_checkpoint(const Model<T>& model, const Trainer<T>* trainer) {
  Checkpoint ck;
  ck.config_json = model.config().to_json();
  model.params().for_each([&](const Parameter<T>& p) { ck.records.push_back(tensor_record("param/" + p.name, p.value)); });
  if (trainer) trainer->write_state(ck);
  return ck;
}

template <typename T>
void load_parameters(Model<T>& model, const Checkpoint& ck) {
  std::vector<std::pair<Parameter<T>*, Tensor<T>>> staged;
  model.params().for_each([&](Parameter<T>& p) {
    Tensor<T> t = record_tensor<T>(ck.at("param/" + p.name));
    if (t.shape() != p.value.shape())
      throw FormatError("checkpoint: param/" + p.name + " has shape " + shape_str(t.shape()) +
                        ", model expects " + shape_str(p.value.shape()));
    staged.emplace_back(&p, std::move(t));
  });
  for (auto& [p, t] : staged) p->value = std::move(t);
}

template <typename T>
void train(Trainer<T>& trainer, const Dataset& data, const SplitConfig& split, const TrainOptions& opts) {
  std::ofstream log;
  if (!opts.log_path.empty()) {
    log.open(opts.log_path, std::ios::app);
    if (!log) throw IoError("cannot open training log " + opts.log_path);
  }
  if (!opts.checkpoint_dir.empty()) {
    std::error_code ec;
    fs::create_directories(opts.checkpoint_dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory " + opts.checkpoint_dir);
  }
  for (std::uint64_t i = 0; i < opts.steps; ++i) {
    const StepLog entry = trainer.step(data, split);
    if (log) log << entry.to_json() << "\n" << std::flush;
    if (opts.on_step) opts.on_step(entry);
    if (!opts.checkpoint_dir.empty() && opts.checkpoint_every > 0 &&
        trainer.steps_done() % opts.checkpoint_every == 0) {
      make_checkpoint(trainer.model(), &trainer)
          .save((fs::path(opts.checkpoint_dir) / ("step_" + padded(trainer.steps_done(), 6) + ".symn")).string());
    }
  }
}

std::string EvalReport::to_json(const Dataset* data) const {
  json j;
  j["rounds"] = round_miou;
  j["mean_miou"] = mean_miou;
  json pc = json::object();
  for (const auto& [id, v] : per_class) pc[data ? data->cls(id).name : std::to_string(id)] = v;
  j["per_class"] = pc;
  j["zero_denominator"] = zero_denominator;
  j["skipped"] = skipped;
  return j.dump(2);
}

template <typename T>
EvalReport evaluate(const Model<T>& model, const Dataset& data, const SplitConfig& split,
                    const EvalOptions& opts) {
  require(opts.rounds >= 1 && opts.episodes >= 1, "evaluate: rounds and episodes must be positive");
  if (!opts.dump_dir.empty()) {
    std::error_code ec;
    fs::create_directories(opts.dump_dir, ec);
    if (ec) throw IoError("cannot create dump directory " + opts.dump_dir);
  }
  struct RoundResult {
    IouReport report;
    std::size_t skipped = 0;
  };
  std::vector<RoundResult> results(opts.rounds);
  auto run_round = [&](std::size_t r) {
    std::mt19937_64 rng(opts.seed + r);
    IouAccumulator acc;
    std::size_t skipped = 0;
    for (std::size_t e = 0; e < opts.episodes; ++e) {
      for (std::size_t attempt = 0;; ++attempt) {
        if (attempt == kMaxResamples) throw InvalidConfig("evaluate: no episode with a usable support mask");
        auto ep = sample_episode<T>(data, split, SplitMode::kTest, opts.k_shot, rng);
        Tape<T> tape(false);
        ForwardOptions<T> fo;
        fo.compute_loss = false;
        ForwardResult<T> out;
        try {
          out = model.forward(tape, ep.input, fo);
        } catch (const EmptyForeground&) {
          ++skipped;
          continue;
        }
        const Tensor<T> pred = fusion::predicted_mask(out.preds.final.value());
        acc.add(ep.class_id, pred, ep.input.query_mask);
        if (!opts.dump_dir.empty()) {
          const std::string stem = "r" + padded(r, 1) + "_e" + padded(e, 4);
          const auto& qs = ep.input.query_mask.shape();
          write_pgm((fs::path(opts.dump_dir) / (stem + "_prior.pgm")).string(),
                    tensor_to_gray(kernels::bilinear_resize(out.prior.map, qs[0], qs[1])));
          write_pgm((fs::path(opts.dump_dir) / (stem + "_pred.pgm")).string(), tensor_to_gray(pred));
        }
        break;
      }
    }
    results[r] = {acc.report(), skipped};
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(opts.threads, opts.rounds));
  if (threads == 1) {
    for (std::size_t r = 0; r < opts.rounds; ++r) run_round(r);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t r = t; r < opts.rounds; r += threads) run_round(r);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  EvalReport rep;
  std::map<std::size_t, std::pair<double, std::size_t>> class_sums;
  for (const auto& rr : results) {
    rep.round_miou.push_back(rr.report.miou);
    rep.skipped += rr.skipped;
    for (const auto& [id, v] : rr.report.per_class) {
      class_sums[id].first += v;
      ++class_sums[id].second;
    }
    for (auto id : rr.report.zero_denominator) rep.zero_denominator.push_back(id);
  }
  double sum = 0;
  for (double v : rep.round_miou) sum += v;
  rep.mean_miou = sum / static_cast<double>(rep.round_miou.size());
  for (const auto& [id, s] : class_sums) rep.per_class[id] = s.first / static_cast<double>(s.second);
  return rep;
}

template <typename T>
spm::PriorMask<T> episode_prior(const Model<T>& model, const Dataset& data, const SplitConfig& split,
                                std::uint64_t index, std::uint64_t seed, std::size_t k_shot) {
  std::mt19937_64 rng(seed + index);
  auto ep = sample_episode<T>(data, split, SplitMode::kTest, k_shot, rng);
  Tape<T> tape(false);
  ForwardOptions<T> fo;
  fo.compute_loss = false;
  const auto out = model.forward(tape, ep.input, fo);
  const auto& qs = ep.input.query_mask.shape();
  spm::PriorMask<T> prior;
  prior.map = kernels::bilinear_resize(out.prior.map, qs[0], qs[1]);
  for (const auto& m : out.prior.per_window) prior.per_window.push_back(kernels::bilinear_resize(m, qs[0], qs[1]));
  return prior;
}

#define SYMNET_INSTANTIATE(T)                                                                     \
  template class Trainer<T>;                                                                      \
  template Checkpoint make_checkpoint(const Model<T>&, const Trainer<T>*);                        \
  template void load_parameters(Model<T>&, const Checkpoint&);                                    \
  template void train(Trainer<T>&, const Dataset&, const SplitConfig&, const TrainOptions&);      \
  template EvalReport evaluate(const Model<T>&, const Dataset&, const SplitConfig&,              \
                               const EvalOptions&);                                               \
  template spm::PriorMask<T> episode_prior(const Model<T>&, const Dataset&, const SplitConfig&, \
                                           std::uint64_t, std::uint64_t, std::size_t);

SYMNET_INSTANTIATE(float)
SYMNET_INSTANTIATE(double)

#undef SYMNET_INSTANTIATE

}  // namespace symnet
