#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmssl/model.hpp"
#include "mmssl/reconstruct.hpp"

namespace mmssl {

// Checkpoint: model config, every tensor, optimizer moments and the fitted
// subspaces, as JSON with full 64-bit round-trip values.

inline nlohmann::ordered_json checkpoint_to_json(const ModelParams& p, const AdamState& adam,
                                                 const std::vector<PcaSubspace>& subs) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  auto& cfg = j["config"];
  cfg["modality_dims"] = p.cfg.modality_dims;
  cfg["hidden"] = p.cfg.hidden;
  cfg["feature"] = p.cfg.feature;
  cfg["classes"] = p.cfg.classes;
  cfg["subspace_k"] = p.cfg.subspace_k;
  auto& tensors = j["tensors"] = nlohmann::ordered_json::object();
  for (const auto& t : p.tensors) {
    tensors[t.name] = {{"shape", t.shape}, {"values", t.v}};
  }
  auto& opt = j["optimizer"];
  opt["lr"] = adam.lr;
  opt["beta1"] = adam.beta1;
  opt["beta2"] = adam.beta2;
  opt["eps"] = adam.eps;
  opt["step"] = adam.step;
  auto& m1 = opt["m"] = nlohmann::ordered_json::object();
  auto& m2 = opt["v"] = nlohmann::ordered_json::object();
  for (size_t i = 0; i < p.tensors.size(); ++i) {
    m1[p.tensors[i].name] = adam.m[i];
    m2[p.tensors[i].name] = adam.v[i];
  }
  auto& js = j["subspaces"] = nlohmann::ordered_json::array();
  for (const auto& s : subs) {
    nlohmann::ordered_json e;
    e["modality"] = s.modality;
    e["components_shape"] = {s.components.rows, s.components.cols};
    e["components"] = s.components.data;
    e["mean"] = s.mean;
    e["eigenvalues"] = s.eigenvalues;
    e["fitted_on"] = s.fitted_on;
    js.push_back(std::move(e));
  }
  return j;
}

struct Checkpoint {
  ModelParams params;
  AdamState adam;
  std::vector<PcaSubspace> subspaces;
};

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (!j.contains("version") || j.at("version").get<int>() != 1)
    throw std::invalid_argument("checkpoint: unsupported or missing version");
  Checkpoint out;
  const auto& cfg = j.at("config");
  out.params.cfg.modality_dims = cfg.at("modality_dims").get<std::vector<int>>();
  out.params.cfg.hidden = cfg.at("hidden").get<int>();
  out.params.cfg.feature = cfg.at("feature").get<int>();
  out.params.cfg.classes = cfg.at("classes").get<int>();
  out.params.cfg.subspace_k = cfg.at("subspace_k").get<int>();

  ModelParams reference = init_model(out.params.cfg, 0);
  out.params.tensors.clear();
  const auto& tensors = j.at("tensors");
  for (const auto& ref : reference.tensors) {
    const auto& jt = tensors.at(ref.name);
    Tensor t;
    t.name = ref.name;
    t.shape = jt.at("shape").get<std::vector<int>>();
    t.v = jt.at("values").get<std::vector<double>>();
    long want = 1;
    for (int s : t.shape) want *= s;
    if (want != static_cast<long>(t.v.size()))
      throw std::invalid_argument("checkpoint: tensor " + t.name + " shape/value mismatch");
    out.params.tensors.push_back(std::move(t));
  }

  const auto& opt = j.at("optimizer");
  out.adam.lr = opt.at("lr").get<double>();
  out.adam.beta1 = opt.at("beta1").get<double>();
  out.adam.beta2 = opt.at("beta2").get<double>();
  out.adam.eps = opt.at("eps").get<double>();
  out.adam.step = opt.at("step").get<long>();
  for (const auto& t : out.params.tensors) {
    out.adam.m.push_back(opt.at("m").at(t.name).get<std::vector<double>>());
    out.adam.v.push_back(opt.at("v").at(t.name).get<std::vector<double>>());
  }

  for (const auto& e : j.at("subspaces")) {
    PcaSubspace s;
    s.modality = e.at("modality").get<int>();
    const auto shape = e.at("components_shape").get<std::vector<int>>();
    s.components = Matrix(shape[0], shape[1]);
    s.components.data = e.at("components").get<std::vector<double>>();
    s.mean = e.at("mean").get<std::vector<double>>();
    s.eigenvalues = e.at("eigenvalues").get<std::vector<double>>();
    s.fitted_on = e.at("fitted_on").get<int>();
    out.subspaces.push_back(std::move(s));
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << content;
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace mmssl
