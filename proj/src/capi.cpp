#include "symnet/symnet.h"

#include <cstring>
#include <filesystem>
#include <memory>
#include <new>
#include <string>
#include <variant>

#include "symnet/error.hpp"
#include "symnet/harness.hpp"
#include "symnet/image_io.hpp"

namespace {

using namespace symnet;

thread_local std::string g_last_error;

template <typename T>
struct Engine {
  std::unique_ptr<Model<T>> model;
  std::unique_ptr<Trainer<T>> trainer;

  explicit Engine(const Config& cfg)
      : model(std::make_unique<Model<T>>(cfg)), trainer(std::make_unique<Trainer<T>>(*model)) {}
};

symnet_status to_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::kInvalidArgument: return SYMNET_ERR_INVALID_ARGUMENT;
    case ErrorCode::kNotFound: return SYMNET_ERR_NOT_FOUND;
    case ErrorCode::kIo: return SYMNET_ERR_IO;
    case ErrorCode::kFormat: return SYMNET_ERR_FORMAT;
    case ErrorCode::kVersion: return SYMNET_ERR_VERSION;
    case ErrorCode::kNumeric: return SYMNET_ERR_NUMERIC;
    case ErrorCode::kEmptyForeground: return SYMNET_ERR_EMPTY_FOREGROUND;
    case ErrorCode::kInvalidConfig: return SYMNET_ERR_INVALID_CONFIG;
    case ErrorCode::kState: return SYMNET_ERR_STATE;
  }
  return SYMNET_ERR_INTERNAL;
}

template <typename F>
symnet_status guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return SYMNET_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return SYMNET_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SYMNET_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return SYMNET_ERR_INTERNAL;
  }
}

symnet_status fail(symnet_status s, const char* msg) {
  g_last_error = msg;
  return s;
}

symnet_status copy_out(const std::string& text, char* buf, std::size_t cap, std::size_t* needed) {
  if (needed) *needed = text.size() + 1;
  if (!buf || cap < text.size() + 1) {
    g_last_error = "buffer too small: " + std::to_string(text.size() + 1) + " bytes needed";
    return SYMNET_ERR_BUFFER_TOO_SMALL;
  }
  std::memcpy(buf, text.c_str(), text.size() + 1);
  g_last_error.clear();
  return SYMNET_OK;
}

}  // namespace

struct symnet_session {
  std::variant<Engine<float>, Engine<double>> engine;
  std::string last_report;
  std::string data_dir;
  std::unique_ptr<Dataset> data;

  explicit symnet_session(const Config& cfg) : engine(make(cfg)) {}

  static std::variant<Engine<float>, Engine<double>> make(const Config& cfg) {
    if (cfg.precision == Precision::kF64) return std::variant<Engine<float>, Engine<double>>(std::in_place_index<1>, cfg);
    return std::variant<Engine<float>, Engine<double>>(std::in_place_index<0>, cfg);
  }

  const Config& config() const {
    return std::visit([](const auto& e) -> const Config& { return e.model->config(); }, engine);
  }

  const Dataset& dataset(const char* dir) {
    std::string d = dir ? dir : config().data_dir;
    if (d.empty()) throw InvalidConfig("no data directory given and the config has no data_dir");
    if (!data || d != data_dir) {
      data = std::make_unique<Dataset>(Dataset::load(d));
      data_dir = d;
    }
    return *data;
  }
};

extern "C" {

const char* symnet_last_error_message(void) { return g_last_error.c_str(); }

const char* symnet_status_string(symnet_status s) {
  switch (s) {
    case SYMNET_OK: return "ok";
    case SYMNET_ERR_INVALID_ARGUMENT: return "invalid argument";
    case SYMNET_ERR_NOT_FOUND: return "not found";
    case SYMNET_ERR_IO: return "i/o error";
    case SYMNET_ERR_FORMAT: return "format error";
    case SYMNET_ERR_VERSION: return "version error";
    case SYMNET_ERR_NUMERIC: return "numeric error";
    case SYMNET_ERR_EMPTY_FOREGROUND: return "empty foreground";
    case SYMNET_ERR_INVALID_CONFIG: return "invalid config";
    case SYMNET_ERR_STATE: return "invalid state";
    case SYMNET_ERR_BUFFER_TOO_SMALL: return "buffer too small";
    case SYMNET_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

symnet_status symnet_default_config(char* buf, size_t cap, size_t* needed) {
  std::string text;
  const auto s = guard([&] { text = Config().to_json(); });
  return s == SYMNET_OK ? copy_out(text, buf, cap, needed) : s;
}

void symnet_dataset_options_init(symnet_dataset_options* opts) {
  if (!opts) return;
  const GeneratorOptions d;
  opts->n_classes = static_cast<unsigned>(d.n_classes);
  opts->per_class = static_cast<unsigned>(d.per_class);
  opts->resolution = static_cast<unsigned>(d.resolution);
  opts->seed = d.seed;
  opts->distractor_prob = d.distractor_prob;
}

symnet_status symnet_generate_dataset(const char* out_dir, const symnet_dataset_options* opts) {
  if (!out_dir || !opts) return fail(SYMNET_ERR_INVALID_ARGUMENT, "out_dir and opts are required");
  return guard([&] {
    GeneratorOptions g;
    g.n_classes = opts->n_classes;
    g.per_class = opts->per_class;
    g.resolution = opts->resolution;
    g.seed = opts->seed;
    g.distractor_prob = opts->distractor_prob;
    g.stride = Config().stem_stride;
    generate_synthetic_dataset(out_dir, g);
  });
}

symnet_status symnet_session_create(const char* config_json, symnet_session** out) {
  if (!out) return fail(SYMNET_ERR_INVALID_ARGUMENT, "out is required");
  *out = nullptr;
  return guard([&] {
    const Config cfg = config_json ? Config::from_json(config_json) : Config();
    *out = new symnet_session(cfg);
  });
}

symnet_status symnet_session_load(const char* path, symnet_session** out) {
  if (!path || !out) return fail(SYMNET_ERR_INVALID_ARGUMENT, "path and out are required");
  *out = nullptr;
  return guard([&] {
    const Checkpoint ck = Checkpoint::load(path);
    const Config cfg = Config::from_json(ck.config_json);
    auto s = std::make_unique<symnet_session>(cfg);
    std::visit(
        [&](auto& e) {
          load_parameters(*e.model, ck);
          if (ck.find("trainer/step")) e.trainer->read_state(ck);
        },
        s->engine);
    *out = s.release();
  });
}

symnet_status symnet_session_save(const symnet_session* session, const char* path) {
  if (!session || !path) return fail(SYMNET_ERR_INVALID_ARGUMENT, "session and path are required");
  return guard([&] {
    std::visit([&](const auto& e) { make_checkpoint(*e.model, e.trainer.get()).save(path); }, session->engine);
  });
}

void symnet_session_destroy(symnet_session* session) { delete session; }

symnet_status symnet_session_config(const symnet_session* session, char* buf, size_t cap, size_t* needed) {
  if (!session) return fail(SYMNET_ERR_INVALID_ARGUMENT, "session is required");
  std::string text;
  const auto s = guard([&] { text = session->config().to_json(); });
  return s == SYMNET_OK ? copy_out(text, buf, cap, needed) : s;
}

symnet_status symnet_session_set_ablation(symnet_session* session, int use_spm, int use_apa, int use_tdc) {
  if (!session) return fail(SYMNET_ERR_INVALID_ARGUMENT, "session is required");
  return guard([&] {
    std::visit([&](auto& e) { e.model->set_ablation(use_spm != 0, use_apa != 0, use_tdc != 0); }, session->engine);
  });
}

symnet_status symnet_session_steps(const symnet_session* session, uint64_t* steps) {
  if (!session || !steps) return fail(SYMNET_ERR_INVALID_ARGUMENT, "session and steps are required");
  return guard([&] {
    *steps = std::visit([](const auto& e) { return e.trainer->steps_done(); }, session->engine);
  });
}

void symnet_train_options_init(symnet_train_options* opts) {
  if (!opts) return;
  *opts = symnet_train_options{nullptr, 0, nullptr, nullptr, 0};
}

symnet_status symnet_train(symnet_session* session, const symnet_train_options* opts) {
  if (!session || !opts) return fail(SYMNET_ERR_INVALID_ARGUMENT, "session and opts are required");
  return guard([&] {
    const Dataset& data = session->dataset(opts->data_dir);
    const Config& cfg = session->config();
    const SplitConfig split = split_from(cfg, data.n_classes());
    TrainOptions to;
    to.steps = opts->steps ? opts->steps : cfg.steps;
    to.log_path = opts->log_path ? opts->log_path : "";
    to.checkpoint_dir = opts->checkpoint_dir ? opts->checkpoint_dir : "";
    to.checkpoint_every = opts->checkpoint_every ? opts->checkpoint_every : cfg.checkpoint_every;
    std::visit(
        [&](auto& e) {
          e.trainer->set_dump_dir(to.checkpoint_dir);
          train(*e.trainer, data, split, to);
        },
        session->engine);
  });
}

void symnet_eval_options_init(symnet_eval_options* opts) {
  if (!opts) return;
  const EvalOptions d;
  *opts = symnet_eval_options{nullptr, -1, static_cast<unsigned>(d.k_shot), static_cast<unsigned>(d.rounds),
                              static_cast<unsigned>(d.episodes), d.seed, nullptr, 1};
}

symnet_status symnet_evaluate(symnet_session* session, const symnet_eval_options* opts, double* mean_miou) {
  if (!session || !opts) return fail(SYMNET_ERR_INVALID_ARGUMENT, "session and opts are required");
  return guard([&] {
    const Dataset& data = session->dataset(opts->data_dir);
    const Config& cfg = session->config();
    SplitConfig split = split_from(cfg, data.n_classes());
    if (opts->fold >= 0) split.test_fold = static_cast<std::size_t>(opts->fold);
    split.validate();
    EvalOptions eo;
    eo.k_shot = opts->k_shot;
    eo.rounds = opts->rounds;
    eo.episodes = opts->episodes;
    eo.seed = opts->seed;
    eo.dump_dir = opts->dump_dir ? opts->dump_dir : "";
    eo.threads = opts->threads;
    const EvalReport rep =
        std::visit([&](const auto& e) { return evaluate(*e.model, data, split, eo); }, session->engine);
    session->last_report = rep.to_json(&data);
    if (mean_miou) *mean_miou = rep.mean_miou;
  });
}

symnet_status symnet_session_last_report(const symnet_session* session, char* buf, size_t cap, size_t* needed) {
  if (!session) return fail(SYMNET_ERR_INVALID_ARGUMENT, "session is required");
  if (session->last_report.empty()) return fail(SYMNET_ERR_STATE, "no evaluation has been run");
  return copy_out(session->last_report, buf, cap, needed);
}

symnet_status symnet_prior_mask(symnet_session* session, const char* data_dir, int fold, uint64_t episode,
                                uint64_t seed, const char* out_path) {
  if (!session || !out_path) return fail(SYMNET_ERR_INVALID_ARGUMENT, "session and out_path are required");
  return guard([&] {
    const Dataset& data = session->dataset(data_dir);
    SplitConfig split = split_from(session->config(), data.n_classes());
    if (fold >= 0) split.test_fold = static_cast<std::size_t>(fold);
    split.validate();
    std::visit(
        [&](const auto& e) {
          const auto prior = episode_prior(*e.model, data, split, episode, seed, e.model->config().k_shot);
          write_pgm(out_path, tensor_to_gray(prior.map));
          const std::filesystem::path out(out_path);
          for (std::size_t i = 0; i < prior.per_window.size(); ++i) {
            std::filesystem::path p = out;
            p.replace_filename(out.stem().string() + "_w" + std::to_string(i) + out.extension().string());
            write_pgm(p.string(), tensor_to_gray(prior.per_window[i]));
          }
        },
        session->engine);
  });
}

}  // extern "C"
