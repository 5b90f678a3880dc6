#pragma once

#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mmssl/dataset.hpp"
#include "mmssl/model.hpp"
#include "mmssl/pca.hpp"
#include "mmssl/rng.hpp"

namespace mmssl {

enum class ReconstructMode { none, zero_fill, subspace_map };

struct ReconstructConfig {
  ReconstructMode mode = ReconstructMode::subspace_map;
  int k = 4;              // principal components kept per modality
  double lambda_r = 0.1;  // detection-consistency weight inside L_recover
  int refresh = 1;        // subspace refit cadence, in epochs
  bool pca_center = true;
};

// Per-modality principal subspace of encoder features, fitted on labeled
// modality-complete samples. Treated as constants between refits: no gradient
// flows through components or mean.
struct PcaSubspace {
  int modality = 0;
  Matrix components;            // F x K
  std::vector<double> mean;     // F
  std::vector<double> eigenvalues;
  int fitted_on = 0;
};

inline std::vector<PcaSubspace> fit_subspaces(const ModelParams& params, const Dataset& data,
                                              const ReconstructConfig& cfg) {
  std::vector<int> complete;
  for (int id : data.labeled_ids) {
    const auto& s = data.samples[id];
    bool all = true;
    for (int m = 0; m < data.modalities; ++m) all = all && s.available[m];
    if (all) complete.push_back(id);
  }
  if (static_cast<int>(complete.size()) < cfg.k)
    throw std::invalid_argument("fit_subspaces: fewer labeled modality-complete samples than k");

  std::vector<PcaSubspace> subs(data.modalities);
  const int f = params.cfg.feature;
  for (int m = 0; m < data.modalities; ++m) {
    Matrix z(static_cast<int>(complete.size()), f);
    for (size_t r = 0; r < complete.size(); ++r) {
      const auto feat = encode_value(params, m, data.samples[complete[r]].inputs[m]);
      for (int j = 0; j < f; ++j) z(static_cast<int>(r), j) = feat[j];
    }
    PcaResult fit = pca_fit(z, cfg.k, cfg.pca_center);
    subs[m] = PcaSubspace{m, std::move(fit.components), std::move(fit.mean), std::move(fit.eigenvalues),
                          static_cast<int>(complete.size())};
  }
  return subs;
}

// Constant leaves for the subspace data of each modality, one set per tape.
struct SubspaceNodes {
  std::vector<int> mean_node;
  std::vector<int> vt_node;  // K x F leaf holding V^T
};

inline SubspaceNodes bind_subspaces(Tape& t, const std::vector<PcaSubspace>& subs) {
  SubspaceNodes sn;
  for (const auto& sub : subs) {
    sn.mean_node.push_back(t.leaf(sub.mean));
    const Matrix vt = transpose(sub.components);
    sn.vt_node.push_back(t.leaf(vt.data, vt.rows, vt.cols));
  }
  return sn;
}

// Recovery of a missing modality's features from the available ones:
//   zhat^m = (1/|sources|) [ sum_{m'} (z^{m'} - mu^{m'}) ] W^m (V^m)^T + mu^m
// The divisor is the actual source count, which reduces to M-1 when every
// other modality is present. Gradients reach W^m and the source features; the
// subspace itself stays fixed.
inline int recover_node(Tape& t, const ParamNodes& pn, const ModelParams& params, const SubspaceNodes& sn,
                        std::span<const std::pair<int, int>> sources /* (modality, feature node) */,
                        int target_m) {
  if (sources.empty()) throw std::logic_error("recover: no source modalities");
  std::vector<int> centered;
  for (const auto& [m, node] : sources) centered.push_back(t.sub(node, sn.mean_node[m]));
  const int avg = t.scale(t.add_n(centered), 1.0 / static_cast<double>(sources.size()));
  const int coords = t.vecmat(avg, pn.of(params.map_w(target_m)));
  const int back = t.vecmat(coords, sn.vt_node[target_m]);
  std::vector<int> with_mean{back, sn.mean_node[target_m]};
  return t.add_n(with_mean);
}

inline std::vector<double> recover_value(const ModelParams& params, const std::vector<PcaSubspace>& subs,
                                         const std::vector<std::pair<int, std::vector<double>>>& sources,
                                         int target_m) {
  if (sources.empty()) throw std::logic_error("recover: no source modalities");
  const int f = params.cfg.feature;
  const int k = params.cfg.subspace_k;
  std::vector<double> acc(f, 0.0);
  for (const auto& [m, z] : sources)
    for (int j = 0; j < f; ++j) acc[j] += z[j] - subs[m].mean[j];
  for (double& v : acc) v /= static_cast<double>(sources.size());
  const Tensor& w = params.tensors[params.map_w(target_m)];
  std::vector<double> coords(k, 0.0);
  for (int r = 0; r < f; ++r)
    for (int c = 0; c < k; ++c) coords[c] += acc[r] * w.v[static_cast<size_t>(r) * k + c];
  std::vector<double> out(subs[target_m].mean);
  const Matrix& v = subs[target_m].components;
  for (int r = 0; r < f; ++r)
    for (int c = 0; c < k; ++c) out[r] += v(r, c) * coords[c];
  return out;
}

// One reconstruction training example: recovered vs. true features of the
// hidden modality plus the two fused predictions for the consistency term.
struct RecoverTerm {
  int zhat = -1;         // recovered feature node
  int ztrue = -1;        // true feature node (same modality, gradient flows)
  int logits_rec = -1;   // classifier logits with the recovered slot
  int target_probs = -1; // constant leaf: prediction from the true features
};

// L_recover = (1/n) sum_i [ ||zhat_i - z_i||^2 + lambda_r * H(p_rec, p_true) ]
// with p_true detached.
inline int loss_recover(Tape& t, std::span<const RecoverTerm> terms, double lambda_r) {
  if (terms.empty()) return t.constant_scalar(0.0);
  std::vector<int> parts;
  std::vector<double> coefs;
  const double inv_n = 1.0 / static_cast<double>(terms.size());
  for (const auto& term : terms) {
    parts.push_back(t.sq_dist(term.zhat, term.ztrue));
    coefs.push_back(inv_n);
    if (lambda_r != 0.0) {
      parts.push_back(t.softmax_ce_soft(term.logits_rec, term.target_probs));
      coefs.push_back(lambda_r * inv_n);
    }
  }
  return t.sum_scaled(parts, coefs);
}

// Which modality to hide on a labeled batch: uniform over the modalities with
// a nonzero configured missing rate, or over all of them when none is
// configured missing. Returns -1 when M < 2 (reconstruction disabled).
inline int choose_hidden_modality(Rng& rng, const std::vector<double>& configured_rates) {
  const int m_count = static_cast<int>(configured_rates.size());
  if (m_count < 2) return -1;
  std::vector<int> candidates;
  for (int m = 0; m < m_count; ++m)
    if (configured_rates[m] > 0.0) candidates.push_back(m);
  if (candidates.empty()) {
    for (int m = 0; m < m_count; ++m) candidates.push_back(m);
  }
  return candidates[rng.uniform_int(static_cast<int>(candidates.size()))];
}

}  // namespace mmssl
