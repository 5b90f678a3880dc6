#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmssl/rng.hpp"
#include "mmssl/tape.hpp"

namespace mmssl {

struct ModelConfig {
  std::vector<int> modality_dims;
  int hidden = 32;
  int feature = 32;   // per-modality feature width F, shared across modalities
  int classes = 2;
  int subspace_k = 4; // K of the cross-modality mapping matrices

  int modalities() const { return static_cast<int>(modality_dims.size()); }
  int fused_dim() const { return modalities() * feature; }
};

struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> v;

  int rows() const { return shape[0]; }
  int cols() const { return shape.size() > 1 ? shape[1] : 1; }
};

// Trainable state: per-modality two-layer encoders, a two-layer classifier on
// the fused feature vector, and one F x K mapping matrix per modality.
struct ModelParams {
  ModelConfig cfg;
  std::vector<Tensor> tensors;

  int enc_w1(int m) const { return 4 * m; }
  int enc_b1(int m) const { return 4 * m + 1; }
  int enc_w2(int m) const { return 4 * m + 2; }
  int enc_b2(int m) const { return 4 * m + 3; }
  int cls_w1() const { return 4 * cfg.modalities(); }
  int cls_b1() const { return 4 * cfg.modalities() + 1; }
  int cls_w2() const { return 4 * cfg.modalities() + 2; }
  int cls_b2() const { return 4 * cfg.modalities() + 3; }
  int map_w(int m) const { return 4 * cfg.modalities() + 4 + m; }
  int tensor_count() const { return 4 * cfg.modalities() + 4 + cfg.modalities(); }

  long parameter_count() const {
    long n = 0;
    for (const auto& t : tensors) n += static_cast<long>(t.v.size());
    return n;
  }
};

namespace detail {

inline Tensor glorot(const std::string& name, int rows, int cols, Rng& rng) {
  Tensor t{name, {rows, cols}, std::vector<double>(static_cast<size_t>(rows) * cols)};
  const double a = std::sqrt(6.0 / (rows + cols));
  for (double& v : t.v) v = (2.0 * rng.uniform() - 1.0) * a;
  return t;
}

inline Tensor zeros(const std::string& name, int n) {
  return Tensor{name, {n}, std::vector<double>(n, 0.0)};
}

}  // namespace detail

inline ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p;
  p.cfg = cfg;
  Rng rng(Rng(seed).fork(7).next_u64());
  for (int m = 0; m < cfg.modalities(); ++m) {
    const std::string tag = "enc" + std::to_string(m);
    p.tensors.push_back(detail::glorot(tag + ".w1", cfg.hidden, cfg.modality_dims[m], rng));
    p.tensors.push_back(detail::zeros(tag + ".b1", cfg.hidden));
    p.tensors.push_back(detail::glorot(tag + ".w2", cfg.feature, cfg.hidden, rng));
    p.tensors.push_back(detail::zeros(tag + ".b2", cfg.feature));
  }
  p.tensors.push_back(detail::glorot("cls.w1", cfg.hidden, cfg.fused_dim(), rng));
  p.tensors.push_back(detail::zeros("cls.b1", cfg.hidden));
  p.tensors.push_back(detail::glorot("cls.w2", cfg.classes, cfg.hidden, rng));
  p.tensors.push_back(detail::zeros("cls.b2", cfg.classes));
  for (int m = 0; m < cfg.modalities(); ++m)
    p.tensors.push_back(detail::glorot("map" + std::to_string(m) + ".w", cfg.feature, cfg.subspace_k, rng));
  return p;
}

// --- value-level forward (no gradients; evaluation, pseudo-label probing) ----

namespace detail {

inline std::vector<double> affine_value(const Tensor& w, const Tensor& b, std::span<const double> x) {
  if (w.cols() != static_cast<int>(x.size()))
    throw std::invalid_argument("model: input length does not match " + w.name);
  std::vector<double> y(w.rows());
  for (int i = 0; i < w.rows(); ++i) {
    double acc = b.v[i];
    const double* row = &w.v[static_cast<size_t>(i) * w.cols()];
    for (int j = 0; j < w.cols(); ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
  return y;
}

}  // namespace detail

inline std::vector<double> encode_value(const ModelParams& p, int m, std::span<const double> x) {
  auto h = detail::affine_value(p.tensors[p.enc_w1(m)], p.tensors[p.enc_b1(m)], x);
  for (double& v : h) v = v > 0.0 ? v : 0.0;
  return detail::affine_value(p.tensors[p.enc_w2(m)], p.tensors[p.enc_b2(m)], h);
}

inline std::vector<double> classifier_logits_value(const ModelParams& p, std::span<const double> fused) {
  auto h = detail::affine_value(p.tensors[p.cls_w1()], p.tensors[p.cls_b1()], fused);
  for (double& v : h) v = v > 0.0 ? v : 0.0;
  return detail::affine_value(p.tensors[p.cls_w2()], p.tensors[p.cls_b2()], h);
}

// Concatenates per-modality features in modality order. Every slot must be
// filled (true, recovered, or zero-filled) before fusing.
inline std::vector<double> fuse_value(const std::vector<std::vector<double>>& feats) {
  std::vector<double> out;
  for (const auto& f : feats) {
    if (f.empty()) throw std::logic_error("fuse: missing feature slot");
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

// --- tape-level forward -------------------------------------------------------

// One leaf per tensor, bound once per tape so gradients accumulate per tensor.
struct ParamNodes {
  std::vector<int> node;

  int of(int tensor_idx) const { return node[tensor_idx]; }
};

inline ParamNodes bind_params(Tape& t, const ModelParams& p) {
  ParamNodes pn;
  pn.node.resize(p.tensors.size());
  for (size_t i = 0; i < p.tensors.size(); ++i) {
    const Tensor& ten = p.tensors[i];
    pn.node[i] = t.leaf(ten.v, ten.rows(), ten.cols(), static_cast<int>(i));
  }
  return pn;
}

inline int encode_node(Tape& t, const ParamNodes& pn, const ModelParams& p, int m, int x) {
  const int h = t.relu(t.affine(pn.of(p.enc_w1(m)), x, pn.of(p.enc_b1(m))));
  return t.affine(pn.of(p.enc_w2(m)), h, pn.of(p.enc_b2(m)));
}

inline int classifier_node(Tape& t, const ParamNodes& pn, const ModelParams& p, int fused) {
  const int h = t.relu(t.affine(pn.of(p.cls_w1()), fused, pn.of(p.cls_b1())));
  return t.affine(pn.of(p.cls_w2()), h, pn.of(p.cls_b2()));
}

// --- optimizer ----------------------------------------------------------------

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> m, v;
};

inline AdamState make_adam(const ModelParams& p, double lr) {
  AdamState s;
  s.lr = lr;
  s.m.resize(p.tensors.size());
  s.v.resize(p.tensors.size());
  for (size_t i = 0; i < p.tensors.size(); ++i) {
    s.m[i].assign(p.tensors[i].v.size(), 0.0);
    s.v[i].assign(p.tensors[i].v.size(), 0.0);
  }
  return s;
}

inline std::vector<std::vector<double>> zero_grads(const ModelParams& p) {
  std::vector<std::vector<double>> g(p.tensors.size());
  for (size_t i = 0; i < p.tensors.size(); ++i) g[i].assign(p.tensors[i].v.size(), 0.0);
  return g;
}

// Standard Adam with bias correction; one shared step counter.
inline void adam_step(AdamState& s, ModelParams& p, const std::vector<std::vector<double>>& grads) {
  if (grads.size() != p.tensors.size()) throw std::logic_error("adam: gradient/tensor count mismatch");
  ++s.step;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (size_t i = 0; i < p.tensors.size(); ++i) {
    auto& w = p.tensors[i].v;
    const auto& g = grads[i];
    if (g.size() != w.size()) throw std::logic_error("adam: gradient shape mismatch at " + p.tensors[i].name);
    auto& m = s.m[i];
    auto& v = s.v[i];
    for (size_t j = 0; j < w.size(); ++j) {
      m[j] = s.beta1 * m[j] + (1.0 - s.beta1) * g[j];
      v[j] = s.beta2 * v[j] + (1.0 - s.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
    }
  }
}

}  // namespace mmssl
