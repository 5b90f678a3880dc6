#pragma once

#include <algorithm>
#include <span>
#include <stdexcept>
#include <vector>

#include "mmssl/numeric.hpp"
#include "mmssl/tape.hpp"

namespace mmssl {

// Per-class pseudo-labeling state. Counters accumulate over one epoch; the
// thresholds are recomputed once per epoch after the batch loop.
struct ThresholdState {
  int classes = 0;
  double tau_base = 0.95;  // predefined base threshold
  double tau_high = 0.95;  // upper bound, also the balanced-distribution value
  std::vector<long> sigma_l;   // labels per class
  std::vector<long> sigma_u;   // accepted pseudo-labels per class, this epoch
  std::vector<long> gamma;     // sigma_l + sigma_u
  std::vector<double> p;       // cumulative class distribution
  double d_kl = 0.0;           // KL(p || uniform)
  std::vector<double> tau;     // per-class thresholds
};

inline ThresholdState make_threshold_state(int classes, double tau_base = 0.95, double tau_high = 0.95) {
  if (classes < 1) throw std::invalid_argument("threshold state: classes must be >= 1");
  ThresholdState s;
  s.classes = classes;
  s.tau_base = tau_base;
  s.tau_high = tau_high;
  s.sigma_l.assign(classes, 0);
  s.sigma_u.assign(classes, 0);
  s.gamma.assign(classes, 0);
  s.p.assign(classes, 1.0 / classes);
  s.tau.assign(classes, tau_base);
  return s;
}

struct PseudoLabelDecision {
  int sample_id = -1;
  double max_prob = 0.0;
  int label = 0;       // argmax class, ties to the lowest index
  bool accepted = false;
};

inline PseudoLabelDecision decide(std::span<const double> probs, const ThresholdState& s, int sample_id = -1) {
  PseudoLabelDecision d;
  d.sample_id = sample_id;
  for (int c = 0; c < static_cast<int>(probs.size()); ++c) {
    if (probs[c] > d.max_prob) {
      d.max_prob = probs[c];
      d.label = c;
    }
  }
  d.accepted = d.max_prob >= s.tau[d.label];
  return d;
}

// Counters and cumulative distribution from this epoch's labels plus accepted
// pseudo-labels. An all-zero total degenerates to the uniform distribution.
inline void update_class_stats(ThresholdState& s, const std::vector<PseudoLabelDecision>& decisions,
                               const std::vector<long>& labeled_counts) {
  if (static_cast<int>(labeled_counts.size()) != s.classes)
    throw std::invalid_argument("update_class_stats: labeled_counts length mismatch");
  s.sigma_l = labeled_counts;
  s.sigma_u.assign(s.classes, 0);
  for (const auto& d : decisions)
    if (d.accepted) ++s.sigma_u[d.label];
  long total = 0;
  for (int c = 0; c < s.classes; ++c) {
    s.gamma[c] = s.sigma_l[c] + s.sigma_u[c];
    total += s.gamma[c];
  }
  if (total == 0) {
    s.p.assign(s.classes, 1.0 / s.classes);
  } else {
    for (int c = 0; c < s.classes; ++c) s.p[c] = static_cast<double>(s.gamma[c]) / static_cast<double>(total);
  }
}

// tau(c) = clamp(p(c) + tau_base - KL(p || uniform), 0, tau_high). The lower
// clamp keeps starved classes admissible when the KL term exceeds the base.
inline void update_thresholds(ThresholdState& s) {
  const std::vector<double> uniform(s.classes, 1.0 / s.classes);
  s.d_kl = kl_divergence(s.p, uniform);
  for (int c = 0; c < s.classes; ++c)
    s.tau[c] = std::clamp(s.p[c] + s.tau_base - s.d_kl, 0.0, s.tau_high);
}

// --- loss terms (tape builders return the loss node id) ------------------------

// Supervised cross-entropy over the labeled batch's strong views. Sum, not
// mean; the trainer normalizes by its own sample count.
inline int loss_cls(Tape& t, std::span<const int> strong_logits, std::span<const int> labels) {
  if (strong_logits.size() != labels.size()) throw std::invalid_argument("loss_cls: size mismatch");
  std::vector<int> terms;
  std::vector<double> ones;
  for (size_t i = 0; i < strong_logits.size(); ++i) {
    terms.push_back(t.softmax_ce(strong_logits[i], labels[i]));
    ones.push_back(1.0);
  }
  if (terms.empty()) return t.constant_scalar(0.0);
  return t.sum_scaled(terms, ones);
}

// Consistency loss on accepted pseudo-labels: cross-entropy of the strong view
// against the weak view's argmax. The target class is an integer, so nothing
// flows back through the weak-side decision.
inline int loss_pl(Tape& t, std::span<const int> strong_logits, std::span<const PseudoLabelDecision> decisions) {
  if (strong_logits.size() != decisions.size()) throw std::invalid_argument("loss_pl: size mismatch");
  std::vector<int> terms;
  std::vector<double> ones;
  for (size_t i = 0; i < decisions.size(); ++i) {
    if (!decisions[i].accepted) continue;
    terms.push_back(t.softmax_ce(strong_logits[i], decisions[i].label));
    ones.push_back(1.0);
  }
  if (terms.empty()) return t.constant_scalar(0.0);
  return t.sum_scaled(terms, ones);
}

struct ContrastiveConfig {
  double temperature = 0.05;
  int negatives = 8;  // nominal S; the loss uses every other pair in the batch
};

// Contrastive loss over the batch's (weak, strong) fused feature pairs. For a
// low-confidence anchor i the positive is its own pair and the negatives are
// the other samples' pairs, so each term is
//   -log( exp(cos_i/T) / sum_k exp(cos_k/T) )
// and the result is the mean over anchors. Pairs of accepted samples still
// serve as negatives.
inline int loss_con(Tape& t, std::span<const int> weak_fused, std::span<const int> strong_fused,
                    const ContrastiveConfig& cfg, const std::vector<bool>& low_conf) {
  if (weak_fused.size() != strong_fused.size() || weak_fused.size() != low_conf.size())
    throw std::invalid_argument("loss_con: size mismatch");
  if (cfg.temperature <= 0.0) throw std::invalid_argument("loss_con: temperature must be positive");
  const int n = static_cast<int>(weak_fused.size());
  int anchors = 0;
  for (bool b : low_conf) anchors += b ? 1 : 0;
  if (anchors == 0 || n == 0) return t.constant_scalar(0.0);

  std::vector<int> scaled_cos(n);
  for (int i = 0; i < n; ++i)
    scaled_cos[i] = t.scale(t.cos_sim(weak_fused[i], strong_fused[i]), 1.0 / cfg.temperature);
  const int lse = t.log_sum_exp(scaled_cos);

  // mean_i [ lse - cos_i/T ] over low-confidence anchors; the denominator sum
  // includes the anchor's own pair, so the lse node is shared by every term.
  std::vector<int> terms{lse};
  std::vector<double> coefs{1.0};
  for (int i = 0; i < n; ++i) {
    if (!low_conf[i]) continue;
    terms.push_back(scaled_cos[i]);
    coefs.push_back(-1.0 / anchors);
  }
  return t.sum_scaled(terms, coefs);
}

// L_ssl = L_cls + lambda_p * L_pl + lambda_c * L_con.
inline double loss_ssl(double l_cls, double l_pl, double l_con, double lambda_p, double lambda_c) {
  if (lambda_p < 0.0 || lambda_c < 0.0) throw std::invalid_argument("loss_ssl: weights must be nonnegative");
  return l_cls + lambda_p * l_pl + lambda_c * l_con;
}

}  // namespace mmssl
