#include "mixmatch/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace mixmatch {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& where, std::set<std::string> known) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (known.count(key) == 0) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

LossWeights parse_weights(const json& obj, LossWeights w, const std::string& where) {
  reject_unknown(obj, where, {"lambda_R", "lambda_S", "lambda_D", "lambda_A", "lambda_L2"});
  read(obj, "lambda_R", w.lambda_r, where);
  read(obj, "lambda_S", w.lambda_s, where);
  read(obj, "lambda_D", w.lambda_d, where);
  read(obj, "lambda_A", w.lambda_a, where);
  read(obj, "lambda_L2", w.lambda_l2, where);
  return w;
}

}  // namespace

void ExperimentConfig::validate() const {
  split.validate();
  train.validate();
  fusion.validate();
  for (double a : sweep.alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw ParameterError("sweep alpha outside [0, 1]");
  }
}

ExperimentConfig parse_config(const json& doc) {
  ExperimentConfig cfg;
  reject_unknown(doc, "config", {"split", "train", "fusion", "sweep"});
  if (doc.contains("split")) {
    const auto& s = doc["split"];
    reject_unknown(s, "split",
                   {"n_d1", "n_d2", "n_d3", "n_val", "seed", "num_classes", "height", "width"});
    read(s, "n_d1", cfg.split.n_d1, "split");
    read(s, "n_d2", cfg.split.n_d2, "split");
    read(s, "n_d3", cfg.split.n_d3, "split");
    read(s, "n_val", cfg.split.n_val, "split");
    read(s, "seed", cfg.split.seed, "split");
    read(s, "num_classes", cfg.split.num_classes, "split");
    read(s, "height", cfg.split.height, "split");
    read(s, "width", cfg.split.width, "split");
  }
  if (doc.contains("train")) {
    const auto& t = doc["train"];
    auto& c = cfg.train;
    reject_unknown(t, "train",
                   {"weights_phase1", "weights_phase2", "iters_phase1", "iters_phase2", "lr",
                    "beta1", "beta2", "batch_size", "noise_sigma", "freeze_rgb_encoder_phase2",
                    "seed", "side_info_mode", "ablation", "adversarial", "log_interval", "arch"});
    if (t.contains("weights_phase1")) {
      c.weights_phase1 = parse_weights(t["weights_phase1"], c.weights_phase1, "train.weights_phase1");
    }
    if (t.contains("weights_phase2")) {
      c.weights_phase2 = parse_weights(t["weights_phase2"], c.weights_phase2, "train.weights_phase2");
    }
    read(t, "iters_phase1", c.iters_phase1, "train");
    read(t, "iters_phase2", c.iters_phase2, "train");
    read(t, "lr", c.lr, "train");
    read(t, "beta1", c.beta1, "train");
    read(t, "beta2", c.beta2, "train");
    read(t, "batch_size", c.batch_size, "train");
    read(t, "noise_sigma", c.noise_sigma, "train");
    read(t, "freeze_rgb_encoder_phase2", c.freeze_rgb_encoder_phase2, "train");
    read(t, "seed", c.seed, "train");
    read(t, "adversarial", c.adversarial, "train");
    read(t, "log_interval", c.log_interval, "train");
    read(t, "arch", c.arch, "train");
    if (t.contains("side_info_mode")) {
      std::string mode;
      read(t, "side_info_mode", mode, "train");
      c.side_info_mode = parse_side_info(mode);
    }
    if (t.contains("ablation")) {
      const auto& a = t["ablation"];
      reject_unknown(a, "train.ablation", {"autoencoders", "latent_loss", "noise"});
      read(a, "autoencoders", c.ablation.autoencoders, "train.ablation");
      read(a, "latent_loss", c.ablation.latent_loss, "train.ablation");
      read(a, "noise", c.ablation.noise, "train.ablation");
    }
  }
  if (doc.contains("fusion")) {
    const auto& f = doc["fusion"];
    reject_unknown(f, "fusion", {"alpha", "index_source"});
    read(f, "alpha", cfg.fusion.alpha, "fusion");
    read(f, "index_source", cfg.fusion.index_source, "fusion");
    cfg.fusion.index_source = canonical_modality(cfg.fusion.index_source);
  }
  if (doc.contains("sweep")) {
    const auto& s = doc["sweep"];
    reject_unknown(s, "sweep", {"alphas", "index_sources"});
    read(s, "alphas", cfg.sweep.alphas, "sweep");
    read(s, "index_sources", cfg.sweep.index_sources, "sweep");
    for (auto& src : cfg.sweep.index_sources) src = canonical_modality(src);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

json to_json(const SplitSpec& s) {
  return {{"n_d1", s.n_d1},   {"n_d2", s.n_d2},
          {"n_d3", s.n_d3},   {"n_val", s.n_val},
          {"seed", s.seed},   {"num_classes", s.num_classes},
          {"height", s.height}, {"width", s.width}};
}

json to_json(const LossWeights& w) {
  return {{"lambda_R", w.lambda_r}, {"lambda_S", w.lambda_s}, {"lambda_D", w.lambda_d},
          {"lambda_A", w.lambda_a}, {"lambda_L2", w.lambda_l2}};
}

json to_json(const TrainConfig& c) {
  return {{"weights_phase1", to_json(c.weights_phase1)},
          {"weights_phase2", to_json(c.weights_phase2)},
          {"iters_phase1", c.iters_phase1},
          {"iters_phase2", c.iters_phase2},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"batch_size", c.batch_size},
          {"noise_sigma", c.noise_sigma},
          {"freeze_rgb_encoder_phase2", c.freeze_rgb_encoder_phase2},
          {"seed", c.seed},
          {"side_info_mode", to_string(c.side_info_mode)},
          {"ablation",
           {{"autoencoders", c.ablation.autoencoders},
            {"latent_loss", c.ablation.latent_loss},
            {"noise", c.ablation.noise}}},
          {"adversarial", c.adversarial},
          {"log_interval", c.log_interval},
          {"arch", c.arch}};
}

json to_json(const ExperimentConfig& cfg) {
  return {{"split", to_json(cfg.split)},
          {"train", to_json(cfg.train)},
          {"fusion", {{"alpha", cfg.fusion.alpha}, {"index_source", cfg.fusion.index_source}}},
          {"sweep", {{"alphas", cfg.sweep.alphas}, {"index_sources", cfg.sweep.index_sources}}}};
}

std::uint64_t run_hash(const SplitSpec& split, const TrainConfig& train) {
  const std::string text = json{{"split", to_json(split)}, {"train", to_json(train)}}.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace mixmatch
