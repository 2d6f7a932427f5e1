// Command-line front end over the C interface.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "symnet/symnet.h"

namespace {

namespace fs = std::filesystem;

struct CliError {
  int code;
};

void check(symnet_status s, const std::string& what) {
  if (s == SYMNET_OK) return;
  std::cerr << "error: " << what << ": " << symnet_status_string(s) << ": " << symnet_last_error_message()
            << "\n";
  throw CliError{static_cast<int>(s)};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "error: cannot read " << path << "\n";
    throw CliError{SYMNET_ERR_IO};
  }
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string text_result(symnet_status (*fn)(const symnet_session*, char*, size_t, size_t*),
                        const symnet_session* session, const std::string& what) {
  size_t needed = 0;
  const symnet_status probe = fn(session, nullptr, 0, &needed);
  if (probe != SYMNET_ERR_BUFFER_TOO_SMALL) check(probe, what);
  std::vector<char> buf(needed);
  check(fn(session, buf.data(), buf.size(), &needed), what);
  return std::string(buf.data());
}

class Session {
 public:
  Session() = default;
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;
  ~Session() { symnet_session_destroy(s_); }
  symnet_session** out() { return &s_; }
  symnet_session* get() const { return s_; }

 private:
  symnet_session* s_ = nullptr;
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    std::cerr << "error: cannot create " << dir << ": " << ec.message() << "\n";
    throw CliError{SYMNET_ERR_IO};
  }
}

struct TrainArgs {
  std::string config, out, data, resume;
  uint64_t steps = 0;
};

struct EvalArgs {
  std::string checkpoint, data, dump_masks, report;
  int fold = -1;
  unsigned k = 1, rounds = 5, episodes = 200, threads = 1;
  uint64_t seed = 1;
};

void add_eval_flags(CLI::App* cmd, EvalArgs& a, bool with_checkpoint) {
  if (with_checkpoint) cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
  cmd->add_option("--data", a.data, "Dataset directory (defaults to the config's data_dir)");
  cmd->add_option("--fold", a.fold, "Held-out fold (defaults to the config's test_fold)");
  cmd->add_option("--k", a.k, "Support shots per episode")->check(CLI::PositiveNumber);
  cmd->add_option("--rounds", a.rounds, "Seeded evaluation rounds")->check(CLI::PositiveNumber);
  cmd->add_option("--episodes", a.episodes, "Episodes per round")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", a.seed, "Seed of round 0; round r uses seed + r");
  cmd->add_option("--threads", a.threads, "Worker threads over rounds")->check(CLI::PositiveNumber);
  cmd->add_option("--dump-masks", a.dump_masks, "Directory for prior and prediction PGMs");
  cmd->add_option("--report", a.report, "Write the JSON report here as well as to stdout");
}

void run_eval(symnet_session* s, const EvalArgs& a) {
  symnet_eval_options eo;
  symnet_eval_options_init(&eo);
  eo.data_dir = a.data.empty() ? nullptr : a.data.c_str();
  eo.fold = a.fold;
  eo.k_shot = a.k;
  eo.rounds = a.rounds;
  eo.episodes = a.episodes;
  eo.seed = a.seed;
  eo.threads = a.threads;
  eo.dump_dir = a.dump_masks.empty() ? nullptr : a.dump_masks.c_str();
  double miou = 0;
  check(symnet_evaluate(s, &eo, &miou), "evaluate");
  const std::string report = text_result(symnet_session_last_report, s, "report");
  std::cout << report << "\n";
  if (!a.report.empty()) {
    std::ofstream out(a.report);
    out << report << "\n";
  }
  std::cerr << "mean mIoU " << miou << "\n";
}

void run_train(symnet_session* s, const std::string& data, const std::string& out_dir, uint64_t steps) {
  ensure_dir(out_dir);
  const std::string log = (fs::path(out_dir) / "train_log.jsonl").string();
  const std::string ckpt = (fs::path(out_dir) / "checkpoints").string();
  symnet_train_options to;
  symnet_train_options_init(&to);
  to.data_dir = data.empty() ? nullptr : data.c_str();
  to.steps = steps;
  to.log_path = log.c_str();
  to.checkpoint_dir = ckpt.c_str();
  check(symnet_train(s, &to), "train");
  const std::string model = (fs::path(out_dir) / "model.symn").string();
  check(symnet_session_save(s, model.c_str()), "save");
  std::cerr << "wrote " << model << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot segmentation with symmetric prototypes"};
  app.require_subcommand(1);

  unsigned classes = 20, per_class = 40, resolution = 64;
  uint64_t data_seed = 1;
  double distractors = 0.5;
  std::string data_out;
  auto* gen = app.add_subcommand("gen-data", "Render a synthetic dataset");
  gen->add_option("--classes", classes, "Number of classes")->check(CLI::PositiveNumber);
  gen->add_option("--per-class", per_class, "Images per class")->check(CLI::PositiveNumber);
  gen->add_option("--resolution", resolution, "Image side in pixels")->check(CLI::PositiveNumber);
  gen->add_option("--seed", data_seed, "Generator seed");
  gen->add_option("--distractor-prob", distractors, "Chance of an extra object per image")
      ->check(CLI::Range(0.0, 1.0));
  gen->add_option("--out", data_out, "Output directory")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", ta.config, "JSON config")->check(CLI::ExistingFile);
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--data", ta.data, "Dataset directory (overrides data_dir)");
  train->add_option("--steps", ta.steps, "Steps to run (overrides the config)");
  train->add_option("--resume", ta.resume, "Continue from this checkpoint")->check(CLI::ExistingFile);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint over seeded rounds");
  add_eval_flags(eval, ea, true);

  std::string pm_ckpt, pm_out, pm_data;
  uint64_t pm_episode = 0, pm_seed = 1;
  int pm_fold = -1;
  auto* prior = app.add_subcommand("prior-mask", "Write the prior mask of one test episode");
  prior->add_option("--checkpoint", pm_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  prior->add_option("--episode", pm_episode, "Episode index")->required();
  prior->add_option("--out", pm_out, "Output PGM")->required();
  prior->add_option("--data", pm_data, "Dataset directory");
  prior->add_option("--fold", pm_fold, "Held-out fold");
  prior->add_option("--seed", pm_seed, "Episode seed base");

  std::string disable;
  TrainArgs aa;
  EvalArgs ae;
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate with one module disabled");
  ablate->add_option("--disable", disable, "Module to disable")
      ->required()
      ->check(CLI::IsMember({"spm", "apa", "tdc"}));
  ablate->add_option("--config", aa.config, "JSON config")->check(CLI::ExistingFile);
  ablate->add_option("--out", aa.out, "Output directory")->required();
  ablate->add_option("--steps", aa.steps, "Training steps (overrides the config)");
  add_eval_flags(ablate, ae, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      symnet_dataset_options o;
      symnet_dataset_options_init(&o);
      o.n_classes = classes;
      o.per_class = per_class;
      o.resolution = resolution;
      o.seed = data_seed;
      o.distractor_prob = distractors;
      check(symnet_generate_dataset(data_out.c_str(), &o), "gen-data");
      std::cerr << "wrote dataset to " << data_out << "\n";
    } else if (*train) {
      Session s;
      if (!ta.resume.empty()) {
        check(symnet_session_load(ta.resume.c_str(), s.out()), "load " + ta.resume);
      } else {
        const std::string cfg = ta.config.empty() ? std::string() : read_file(ta.config);
        check(symnet_session_create(cfg.empty() ? nullptr : cfg.c_str(), s.out()), "config");
      }
      run_train(s.get(), ta.data, ta.out, ta.steps);
    } else if (*eval) {
      Session s;
      check(symnet_session_load(ea.checkpoint.c_str(), s.out()), "load " + ea.checkpoint);
      run_eval(s.get(), ea);
    } else if (*prior) {
      Session s;
      check(symnet_session_load(pm_ckpt.c_str(), s.out()), "load " + pm_ckpt);
      const fs::path parent = fs::path(pm_out).parent_path();
      if (!parent.empty()) ensure_dir(parent.string());
      check(symnet_prior_mask(s.get(), pm_data.empty() ? nullptr : pm_data.c_str(), pm_fold, pm_episode,
                              pm_seed, pm_out.c_str()),
            "prior-mask");
      std::cerr << "wrote " << pm_out << "\n";
    } else if (*ablate) {
      Session s;
      const std::string cfg = aa.config.empty() ? std::string() : read_file(aa.config);
      check(symnet_session_create(cfg.empty() ? nullptr : cfg.c_str(), s.out()), "config");
      check(symnet_session_set_ablation(s.get(), disable != "spm", disable != "apa", disable != "tdc"),
            "ablation");
      run_train(s.get(), ae.data, aa.out, aa.steps);
      if (ae.report.empty()) ae.report = (fs::path(aa.out) / "report.json").string();
      run_eval(s.get(), ae);
    }
  } catch (const CliError& e) {
    return e.code;
  }
  return 0;
}
