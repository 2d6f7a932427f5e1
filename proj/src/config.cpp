#include "symnet/config.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "symnet/error.hpp"

namespace symnet {

using nlohmann::json;

namespace {

const char* kernel_name(ActivationKernel k) {
  return k == ActivationKernel::kL2 ? "l2" : "inner";
}

void check(bool cond, const std::string& what) {
  if (!cond) throw InvalidConfig(what);
}

}  // namespace

void Config::validate() const {
  check(image_size > 0 && stem_stride > 0 && image_size % stem_stride == 0,
        "image_size must be divisible by stem_stride");
  check(feature_size() % 8 == 0, "feature size (image_size / stem_stride) must be divisible by 8");
  check(c_low > 0 && c_mid > 0 && c_high > 0, "channel widths must be positive");
  check(n1 > 0 && n2 > 0 && n3 > 0, "block counts N1, N2, N3 must be positive");
  check(d_text > 0, "d_text must be positive");
  check(!windows.empty(), "at least one pooling window is required");
  for (auto [h, w] : windows) check(h % 2 == 1 && w % 2 == 1, "pooling windows must be odd");
  check(alpha >= 0 && beta >= 0, "alpha and beta must be non-negative");
  check(tau1 > 0 && tau1 < 1, "tau1 must lie in (0, 1)");
  check(tau2 > 0 && tau2 < 1 && tau3 > 0 && tau3 < tau4 && tau4 < 1,
        "thresholds must satisfy 0 < tau2, tau3 < tau4 < 1");
  check(d_scale > 0, "d_scale must be positive");
  check(ffn_mult > 0 && n_prime > 0 && decoder_width > 0, "layer widths must be positive");
  check(lr >= 0 && momentum >= 0 && momentum < 1 && weight_decay >= 0 && grad_clip >= 0,
        "optimizer settings out of range");
  check(batch > 0, "batch must be positive");
  check(k_shot > 0, "K must be at least 1");
  check(n_folds > 1 && test_fold < n_folds, "test_fold must index one of n_folds folds");
}

std::string Config::to_json() const {
  json j;
  j["image_size"] = image_size;
  j["stem_stride"] = stem_stride;
  j["C_low"] = c_low;
  j["C_mid"] = c_mid;
  j["C_high"] = c_high;
  j["N1"] = n1;
  j["N2"] = n2;
  j["N3"] = n3;
  j["d_text"] = d_text;
  j["freeze_backbone"] = freeze_backbone;
  json w = json::array();
  for (auto [h, ww] : windows) w.push_back({h, ww});
  j["windows"] = w;
  j["activation_kernel"] = kernel_name(activation_kernel);
  j["alpha"] = alpha;
  j["beta"] = beta;
  j["tau1"] = tau1;
  j["tau2"] = tau2;
  j["tau3"] = tau3;
  j["tau4"] = tau4;
  j["d_scale"] = d_scale;
  j["ffn_mult"] = ffn_mult;
  j["share_align_params"] = share_align_params;
  j["N_prime"] = n_prime;
  j["corr_reduce"] = corr_reduce == CorrReduceMode::kMean ? "mean" : "max";
  j["decoder_width"] = decoder_width;
  j["use_spm"] = use_spm;
  j["use_apa"] = use_apa;
  j["use_tdc"] = use_tdc;
  j["lr"] = lr;
  j["momentum"] = momentum;
  j["weight_decay"] = weight_decay;
  j["grad_clip"] = grad_clip;
  j["steps"] = steps;
  j["batch"] = batch;
  j["K"] = k_shot;
  j["seed"] = seed;
  j["checkpoint_every"] = checkpoint_every;
  j["precision"] = precision == Precision::kF64 ? "f64" : "f32";
  j["data_dir"] = data_dir;
  j["n_folds"] = n_folds;
  j["test_fold"] = test_fold;
  return j.dump(2);
}

Config Config::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("config is not valid JSON: ") + e.what());
  }
  check(j.is_object(), "config must be a JSON object");
  Config c;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const json& v = it.value();
      if (k == "image_size") c.image_size = v.get<std::size_t>();
      else if (k == "stem_stride") c.stem_stride = v.get<std::size_t>();
      else if (k == "C_low") c.c_low = v.get<std::size_t>();
      else if (k == "C_mid") c.c_mid = v.get<std::size_t>();
      else if (k == "C_high") c.c_high = v.get<std::size_t>();
      else if (k == "N1") c.n1 = v.get<std::size_t>();
      else if (k == "N2") c.n2 = v.get<std::size_t>();
      else if (k == "N3") c.n3 = v.get<std::size_t>();
      else if (k == "d_text") c.d_text = v.get<std::size_t>();
      else if (k == "freeze_backbone") c.freeze_backbone = v.get<bool>();
      else if (k == "windows") {
        c.windows.clear();
        for (const auto& p : v) c.windows.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
      } else if (k == "activation_kernel") {
        auto s = v.get<std::string>();
        check(s == "inner" || s == "l2", "activation_kernel must be \"inner\" or \"l2\"");
        c.activation_kernel = s == "l2" ? ActivationKernel::kL2 : ActivationKernel::kInnerProduct;
      } else if (k == "alpha") c.alpha = v.get<double>();
      else if (k == "beta") c.beta = v.get<double>();
      else if (k == "tau1") c.tau1 = v.get<double>();
      else if (k == "tau2") c.tau2 = v.get<double>();
      else if (k == "tau3") c.tau3 = v.get<double>();
      else if (k == "tau4") c.tau4 = v.get<double>();
      else if (k == "d_scale") c.d_scale = v.get<double>();
      else if (k == "ffn_mult") c.ffn_mult = v.get<std::size_t>();
      else if (k == "share_align_params") c.share_align_params = v.get<bool>();
      else if (k == "N_prime") c.n_prime = v.get<std::size_t>();
      else if (k == "corr_reduce") {
        auto s = v.get<std::string>();
        check(s == "max" || s == "mean", "corr_reduce must be \"max\" or \"mean\"");
        c.corr_reduce = s == "mean" ? CorrReduceMode::kMean : CorrReduceMode::kMax;
      } else if (k == "decoder_width") c.decoder_width = v.get<std::size_t>();
      else if (k == "use_spm") c.use_spm = v.get<bool>();
      else if (k == "use_apa") c.use_apa = v.get<bool>();
      else if (k == "use_tdc") c.use_tdc = v.get<bool>();
      else if (k == "lr") c.lr = v.get<double>();
      else if (k == "momentum") c.momentum = v.get<double>();
      else if (k == "weight_decay") c.weight_decay = v.get<double>();
      else if (k == "grad_clip") c.grad_clip = v.get<double>();
      else if (k == "steps") c.steps = v.get<std::size_t>();
      else if (k == "batch") c.batch = v.get<std::size_t>();
      else if (k == "K") c.k_shot = v.get<std::size_t>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "checkpoint_every") c.checkpoint_every = v.get<std::size_t>();
      else if (k == "precision") {
        auto s = v.get<std::string>();
        check(s == "f32" || s == "f64", "precision must be \"f32\" or \"f64\"");
        c.precision = s == "f64" ? Precision::kF64 : Precision::kF32;
      } else if (k == "data_dir") c.data_dir = v.get<std::string>();
      else if (k == "n_folds") c.n_folds = v.get<std::size_t>();
      else if (k == "test_fold") c.test_fold = v.get<std::size_t>();
      else throw InvalidConfig("unknown config key \"" + k + "\"");
    }
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("config value has the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace symnet
