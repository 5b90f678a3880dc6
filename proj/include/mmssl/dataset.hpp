#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mmssl {

// One synchronized multimodal observation. inputs[m] is meaningful only when
// available[m] is true; label is absent for unlabeled samples.
struct MultimodalSample {
  int id = 0;
  std::vector<std::vector<double>> inputs;  // M slots
  std::vector<bool> available;              // M flags
  std::optional<int> label;
};

struct Dataset {
  std::vector<MultimodalSample> samples;
  int classes = 0;
  int modalities = 0;
  std::vector<int> modality_dims;
  std::vector<int> labeled_ids;
  std::vector<int> unlabeled_ids;

  std::vector<long> labeled_class_counts() const {
    std::vector<long> counts(classes, 0);
    for (int id : labeled_ids) ++counts[*samples[id].label];
    return counts;
  }
};

enum class MissingPattern { uniform, rotation };

struct MissingSpec {
  double rate = 0.0;
  MissingPattern pattern = MissingPattern::uniform;
  int period = 10;   // rotation only
  double duty = -1;  // rotation only; default derived as 1 - rate
  int phase = 0;     // rotation only
};

struct GenConfig {
  std::uint64_t seed = 1;
  int classes = 2;
  std::vector<double> class_priors = {0.9, 0.1};
  int modalities = 3;
  std::vector<int> modality_dims = {16, 8, 6};
  int n = 2000;
  int n_test = 500;
  double labeling_rate = 0.10;
  std::vector<MissingSpec> missing;  // per modality; absent entries mean rate 0
  bool missing_on_labeled = false;
  int latent_dim = 8;
  double noise_std = 1.0;
  double class_separation = 4.0;
  std::vector<double> obs_noise_std = {0.5};  // broadcast if shorter than M
};

struct AugmentConfig {
  double weak_noise_std = 0.0;
  double strong_noise_std = 0.5;
  double strong_mask_frac = 0.25;
};

// --- dataset file format -----------------------------------------------------
// {"version":1,"C":int,"M":int,"dims":[int],"samples":[{"id","label","x"}]}
// Missing modality encoded as null. Key order above is what we emit; reading
// is order-insensitive.

inline nlohmann::ordered_json dataset_to_json(const Dataset& d) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["C"] = d.classes;
  j["M"] = d.modalities;
  j["dims"] = d.modality_dims;
  auto& samples = j["samples"] = nlohmann::ordered_json::array();
  for (const auto& s : d.samples) {
    nlohmann::ordered_json js;
    js["id"] = s.id;
    if (s.label)
      js["label"] = *s.label;
    else
      js["label"] = nullptr;
    auto& x = js["x"] = nlohmann::ordered_json::array();
    for (int m = 0; m < d.modalities; ++m) {
      if (s.available[m])
        x.push_back(s.inputs[m]);
      else
        x.push_back(nullptr);
    }
    samples.push_back(std::move(js));
  }
  return j;
}

inline Dataset dataset_from_json(const nlohmann::json& j) {
  if (!j.contains("version") || j.at("version").get<int>() != 1)
    throw std::invalid_argument("dataset: unsupported or missing version");
  Dataset d;
  d.classes = j.at("C").get<int>();
  d.modalities = j.at("M").get<int>();
  d.modality_dims = j.at("dims").get<std::vector<int>>();
  if (static_cast<int>(d.modality_dims.size()) != d.modalities)
    throw std::invalid_argument("dataset: dims length does not match M");
  for (const auto& js : j.at("samples")) {
    MultimodalSample s;
    s.id = js.at("id").get<int>();
    if (!js.at("label").is_null()) {
      s.label = js.at("label").get<int>();
      if (*s.label < 0 || *s.label >= d.classes) throw std::invalid_argument("dataset: label out of range");
    }
    const auto& x = js.at("x");
    if (static_cast<int>(x.size()) != d.modalities) throw std::invalid_argument("dataset: sample has wrong modality count");
    s.inputs.resize(d.modalities);
    s.available.resize(d.modalities, false);
    bool any = false;
    for (int m = 0; m < d.modalities; ++m) {
      if (x[m].is_null()) continue;
      s.inputs[m] = x[m].get<std::vector<double>>();
      if (static_cast<int>(s.inputs[m].size()) != d.modality_dims[m])
        throw std::invalid_argument("dataset: modality vector has wrong length");
      s.available[m] = true;
      any = true;
    }
    if (!any) throw std::invalid_argument("dataset: sample with no available modality");
    if (s.label)
      d.labeled_ids.push_back(s.id);
    else
      d.unlabeled_ids.push_back(s.id);
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace mmssl
