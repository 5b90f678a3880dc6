#pragma once

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmssl/dataset.hpp"
#include "mmssl/trainer.hpp"

namespace mmssl {

// Configuration problems carry the offending key in the message and map to
// exit code 2 at the CLI.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace cfgdetail {

inline void require_keys(const nlohmann::json& j, const std::string& path,
                         std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config: '" + path + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("config: unknown key '" + (path.empty() ? key : path + "." + key) + "'");
  }
}

template <typename T>
void fetch(const nlohmann::json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: bad value for key '" + (path.empty() ? key : path + "." + key) + "'");
  }
}

}  // namespace cfgdetail

struct ExperimentVariant {
  std::string label;
  nlohmann::json overrides;  // merge-patched over the base config
};

struct ExperimentConfig {
  std::string label = "run";
  GenConfig gen;
  int hidden = 32;
  int feature = 32;
  AugmentConfig augment;
  TrainConfig train;  // reconstruct/augment/missing_rates resolved in here
  bool eval_missing = false;

  std::vector<std::uint64_t> ablate_seeds;
  std::vector<ExperimentVariant> variants;
  int jobs = 0;  // 0 = hardware concurrency

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.modality_dims = gen.modality_dims;
    mc.hidden = hidden;
    mc.feature = feature;
    mc.classes = gen.classes;
    mc.subspace_k = train.reconstruct.k;
    return mc;
  }
};

inline MissingSpec parse_missing_spec(const nlohmann::json& j, const std::string& path) {
  cfgdetail::require_keys(j, path, {"rate", "pattern", "period", "duty", "phase"});
  MissingSpec ms;
  cfgdetail::fetch(j, "rate", ms.rate, path);
  std::string pattern = "uniform";
  cfgdetail::fetch(j, "pattern", pattern, path);
  if (pattern == "uniform")
    ms.pattern = MissingPattern::uniform;
  else if (pattern == "rotation")
    ms.pattern = MissingPattern::rotation;
  else
    throw ConfigError("config: bad value for key '" + path + ".pattern'");
  cfgdetail::fetch(j, "period", ms.period, path);
  cfgdetail::fetch(j, "duty", ms.duty, path);
  cfgdetail::fetch(j, "phase", ms.phase, path);
  if (ms.pattern == MissingPattern::rotation && ms.duty > 0) ms.rate = 1.0 - ms.duty;
  return ms;
}

inline ExperimentConfig parse_experiment(const nlohmann::json& j) {
  using cfgdetail::fetch;
  using cfgdetail::require_keys;
  require_keys(j, "", {"label", "gen", "model", "augment", "train", "reconstruct", "ablate"});

  ExperimentConfig e;
  fetch(j, "label", e.label, "");

  if (j.contains("gen")) {
    const auto& g = j.at("gen");
    require_keys(g, "gen",
                 {"seed", "classes", "class_priors", "modalities", "modality_dims", "n", "n_test",
                  "labeling_rate", "latent_dim", "noise_std", "class_separation", "obs_noise_std", "missing",
                  "missing_on_labeled"});
    fetch(g, "seed", e.gen.seed, "gen");
    fetch(g, "classes", e.gen.classes, "gen");
    fetch(g, "class_priors", e.gen.class_priors, "gen");
    fetch(g, "modalities", e.gen.modalities, "gen");
    fetch(g, "modality_dims", e.gen.modality_dims, "gen");
    fetch(g, "n", e.gen.n, "gen");
    fetch(g, "n_test", e.gen.n_test, "gen");
    fetch(g, "labeling_rate", e.gen.labeling_rate, "gen");
    fetch(g, "latent_dim", e.gen.latent_dim, "gen");
    fetch(g, "noise_std", e.gen.noise_std, "gen");
    fetch(g, "class_separation", e.gen.class_separation, "gen");
    fetch(g, "obs_noise_std", e.gen.obs_noise_std, "gen");
    fetch(g, "missing_on_labeled", e.gen.missing_on_labeled, "gen");
    if (g.contains("missing")) {
      if (!g.at("missing").is_array()) throw ConfigError("config: bad value for key 'gen.missing'");
      e.gen.missing.clear();
      int idx = 0;
      for (const auto& ms : g.at("missing"))
        e.gen.missing.push_back(parse_missing_spec(ms, "gen.missing[" + std::to_string(idx++) + "]"));
    }
  }

  if (j.contains("model")) {
    const auto& m = j.at("model");
    require_keys(m, "model", {"hidden", "feature"});
    fetch(m, "hidden", e.hidden, "model");
    fetch(m, "feature", e.feature, "model");
  }

  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    require_keys(a, "augment", {"weak_noise_std", "strong_noise_std", "strong_mask_frac"});
    fetch(a, "weak_noise_std", e.augment.weak_noise_std, "augment");
    fetch(a, "strong_noise_std", e.augment.strong_noise_std, "augment");
    fetch(a, "strong_mask_frac", e.augment.strong_mask_frac, "augment");
    if (e.augment.strong_mask_frac < 0.0 || e.augment.strong_mask_frac >= 1.0)
      throw ConfigError("config: bad value for key 'augment.strong_mask_frac'");
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    require_keys(t, "train",
                 {"epochs", "batch_size", "lr", "tau", "tau_high", "lambda_p", "lambda_c", "temperature",
                  "negatives", "adaptive_threshold", "contrastive", "eval_every", "seed", "target_accuracy",
                  "eval_missing"});
    fetch(t, "epochs", e.train.epochs, "train");
    fetch(t, "batch_size", e.train.batch_size, "train");
    fetch(t, "lr", e.train.lr, "train");
    fetch(t, "tau", e.train.tau, "train");
    fetch(t, "tau_high", e.train.tau_high, "train");
    fetch(t, "lambda_p", e.train.lambda_p, "train");
    fetch(t, "lambda_c", e.train.lambda_c, "train");
    fetch(t, "temperature", e.train.contrastive_cfg.temperature, "train");
    fetch(t, "negatives", e.train.contrastive_cfg.negatives, "train");
    if (e.train.contrastive_cfg.temperature <= 0.0)
      throw ConfigError("config: bad value for key 'train.temperature'");
    if (e.train.contrastive_cfg.negatives < 1)
      throw ConfigError("config: bad value for key 'train.negatives'");
    fetch(t, "adaptive_threshold", e.train.adaptive_threshold, "train");
    fetch(t, "contrastive", e.train.contrastive, "train");
    fetch(t, "eval_every", e.train.eval_every, "train");
    fetch(t, "seed", e.train.seed, "train");
    fetch(t, "target_accuracy", e.train.target_accuracy, "train");
    fetch(t, "eval_missing", e.eval_missing, "train");
  }

  if (j.contains("reconstruct")) {
    const auto& r = j.at("reconstruct");
    require_keys(r, "reconstruct", {"mode", "k", "lambda_r", "refresh", "pca_center"});
    std::string mode = "subspace_map";
    fetch(r, "mode", mode, "reconstruct");
    if (mode == "none")
      e.train.reconstruct.mode = ReconstructMode::none;
    else if (mode == "zero_fill")
      e.train.reconstruct.mode = ReconstructMode::zero_fill;
    else if (mode == "subspace_map")
      e.train.reconstruct.mode = ReconstructMode::subspace_map;
    else
      throw ConfigError("config: bad value for key 'reconstruct.mode'");
    fetch(r, "k", e.train.reconstruct.k, "reconstruct");
    fetch(r, "lambda_r", e.train.reconstruct.lambda_r, "reconstruct");
    fetch(r, "refresh", e.train.reconstruct.refresh, "reconstruct");
    fetch(r, "pca_center", e.train.reconstruct.pca_center, "reconstruct");
  }

  if (j.contains("ablate")) {
    const auto& a = j.at("ablate");
    require_keys(a, "ablate", {"seeds", "variants", "jobs"});
    fetch(a, "seeds", e.ablate_seeds, "ablate");
    fetch(a, "jobs", e.jobs, "ablate");
    if (a.contains("variants")) {
      if (!a.at("variants").is_array()) throw ConfigError("config: bad value for key 'ablate.variants'");
      int idx = 0;
      for (const auto& v : a.at("variants")) {
        const std::string path = "ablate.variants[" + std::to_string(idx++) + "]";
        cfgdetail::require_keys(v, path, {"label", "train", "reconstruct", "augment", "model"});
        ExperimentVariant var;
        if (!v.contains("label")) throw ConfigError("config: missing key '" + path + ".label'");
        var.label = v.at("label").get<std::string>();
        var.overrides = v;
        var.overrides.erase("label");
        e.variants.push_back(std::move(var));
      }
    }
  }

  e.train.augment = e.augment;
  e.train.missing_rates.assign(e.gen.modalities, 0.0);
  for (size_t m = 0; m < e.gen.missing.size() && m < e.train.missing_rates.size(); ++m)
    e.train.missing_rates[m] = e.gen.missing[m].rate;
  return e;
}

// Full resolved echo, defaults included, so a run is reproducible from its
// artifacts alone.
inline nlohmann::ordered_json experiment_to_json(const ExperimentConfig& e) {
  nlohmann::ordered_json j;
  j["label"] = e.label;
  auto& g = j["gen"];
  g["seed"] = e.gen.seed;
  g["classes"] = e.gen.classes;
  g["class_priors"] = e.gen.class_priors;
  g["modalities"] = e.gen.modalities;
  g["modality_dims"] = e.gen.modality_dims;
  g["n"] = e.gen.n;
  g["n_test"] = e.gen.n_test;
  g["labeling_rate"] = e.gen.labeling_rate;
  g["latent_dim"] = e.gen.latent_dim;
  g["noise_std"] = e.gen.noise_std;
  g["class_separation"] = e.gen.class_separation;
  g["obs_noise_std"] = e.gen.obs_noise_std;
  g["missing_on_labeled"] = e.gen.missing_on_labeled;
  auto& miss = g["missing"] = nlohmann::ordered_json::array();
  for (const auto& ms : e.gen.missing) {
    nlohmann::ordered_json m;
    m["rate"] = ms.rate;
    m["pattern"] = ms.pattern == MissingPattern::rotation ? "rotation" : "uniform";
    if (ms.pattern == MissingPattern::rotation) {
      m["period"] = ms.period;
      m["duty"] = ms.duty > 0 ? ms.duty : 1.0 - ms.rate;
      m["phase"] = ms.phase;
    }
    miss.push_back(std::move(m));
  }
  auto& mo = j["model"];
  mo["hidden"] = e.hidden;
  mo["feature"] = e.feature;
  auto& a = j["augment"];
  a["weak_noise_std"] = e.augment.weak_noise_std;
  a["strong_noise_std"] = e.augment.strong_noise_std;
  a["strong_mask_frac"] = e.augment.strong_mask_frac;
  auto& t = j["train"];
  t["epochs"] = e.train.epochs;
  t["batch_size"] = e.train.batch_size;
  t["lr"] = e.train.lr;
  t["tau"] = e.train.tau;
  t["tau_high"] = e.train.tau_high;
  t["lambda_p"] = e.train.lambda_p;
  t["lambda_c"] = e.train.lambda_c;
  t["temperature"] = e.train.contrastive_cfg.temperature;
  t["negatives"] = e.train.contrastive_cfg.negatives;
  t["adaptive_threshold"] = e.train.adaptive_threshold;
  t["contrastive"] = e.train.contrastive;
  t["eval_every"] = e.train.eval_every;
  t["seed"] = e.train.seed;
  t["target_accuracy"] = e.train.target_accuracy;
  t["eval_missing"] = e.eval_missing;
  auto& r = j["reconstruct"];
  switch (e.train.reconstruct.mode) {
    case ReconstructMode::none: r["mode"] = "none"; break;
    case ReconstructMode::zero_fill: r["mode"] = "zero_fill"; break;
    case ReconstructMode::subspace_map: r["mode"] = "subspace_map"; break;
  }
  r["k"] = e.train.reconstruct.k;
  r["lambda_r"] = e.train.reconstruct.lambda_r;
  r["refresh"] = e.train.reconstruct.refresh;
  r["pca_center"] = e.train.reconstruct.pca_center;
  return j;
}

// Applies a variant's partial overrides (RFC 7386 merge) on top of a base
// config and re-parses, so overridden values pass the same validation.
inline ExperimentConfig apply_variant(const ExperimentConfig& base, const ExperimentVariant& v) {
  nlohmann::json merged = experiment_to_json(base);
  merged.merge_patch(v.overrides);
  ExperimentConfig out = parse_experiment(merged);
  out.label = v.label;
  return out;
}

}  // namespace mmssl
