#pragma once

#include <functional>
#include <iostream>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mmssl/datagen.hpp"
#include "mmssl/dataset.hpp"
#include "mmssl/metrics.hpp"
#include "mmssl/model.hpp"
#include "mmssl/reconstruct.hpp"
#include "mmssl/ssl.hpp"

namespace mmssl {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 8;
  double lr = 1e-4;
  double tau = 0.95;
  double tau_high = 0.95;
  double lambda_p = 0.1;
  double lambda_c = 0.1;
  ContrastiveConfig contrastive_cfg{};
  bool adaptive_threshold = true;
  bool contrastive = true;
  ReconstructConfig reconstruct{};
  AugmentConfig augment{};
  std::vector<double> missing_rates;  // configured per-modality rates; inferred from data when empty
  int eval_every = 1;
  std::uint64_t seed = 1;
  double target_accuracy = 0.9;
  bool quiet = true;
};

struct EpochRecord {
  int epoch = 0;
  double l_cls = 0.0, l_pl = 0.0, l_con = 0.0, l_recover = 0.0, l_all = 0.0;
  std::vector<double> tau;     // thresholds in effect during this epoch
  double d_kl = 0.0;           // divergence behind those thresholds (not serialized)
  std::vector<long> sigma_u;   // accepted pseudo-labels per class, this epoch
  double accept_rate = 0.0;
  std::optional<Metrics> eval;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  Metrics final;
  int convergence_epoch = -1;  // first epoch whose eval accuracy reached target
};

struct BatchTrace {
  int epoch = 0, batch = 0;
  double l_cls = 0.0, l_pl = 0.0, l_con = 0.0, l_recover = 0.0, l_all = 0.0;
  int unlabeled = 0, accepted = 0, contrastive = 0;
};
using BatchHook = std::function<void(const BatchTrace&)>;

// Evaluation on a (typically complete) test set: raw inputs, no augmentation,
// missing slots filled per the reconstruction mode.
inline Metrics evaluate_model(const ModelParams& params, const Dataset& test, ReconstructMode mode,
                              const std::vector<PcaSubspace>* subs, int epoch = -1) {
  if (test.samples.empty()) throw std::invalid_argument("evaluate: empty test set");
  Matrix cm(test.classes, test.classes);
  const int f = params.cfg.feature;
  for (const auto& s : test.samples) {
    if (!s.label) throw std::invalid_argument("evaluate: test sample without label");
    std::vector<std::vector<double>> feats(test.modalities);
    std::vector<std::pair<int, std::vector<double>>> sources;
    for (int m = 0; m < test.modalities; ++m) {
      if (!s.available[m]) continue;
      feats[m] = encode_value(params, m, s.inputs[m]);
      sources.emplace_back(m, feats[m]);
    }
    for (int m = 0; m < test.modalities; ++m) {
      if (s.available[m]) continue;
      if (mode == ReconstructMode::subspace_map && subs)
        feats[m] = recover_value(params, *subs, sources, m);
      else
        feats[m].assign(f, 0.0);
    }
    const auto logits = classifier_logits_value(params, fuse_value(feats));
    int arg = 0;
    for (int c = 1; c < test.classes; ++c)
      if (logits[c] > logits[arg]) arg = c;
    cm(*s.label, arg) += 1.0;
  }
  return metrics_from_confusion(cm, epoch);
}

namespace detail {

// Labeled samples cycle through reshuffled permutations; a batch can repeat a
// sample when fewer labels than batch_size exist.
class LabeledCycler {
 public:
  LabeledCycler(std::vector<int> ids, Rng& rng)
      : ids_(std::move(ids)), rng_(rng), cursor_(static_cast<int>(ids_.size())) {}

  void take(int n, std::vector<int>& out) {
    out.clear();
    for (int i = 0; i < n && !ids_.empty(); ++i) {
      if (cursor_ == static_cast<int>(ids_.size())) {
        rng_.shuffle(ids_);
        cursor_ = 0;
      }
      out.push_back(ids_[cursor_++]);
    }
  }

 private:
  std::vector<int> ids_;
  Rng& rng_;
  int cursor_;  // starts exhausted so the first take shuffles
};

inline std::vector<double> inferred_missing_rates(const Dataset& d) {
  std::vector<double> rates(d.modalities, 0.0);
  if (d.unlabeled_ids.empty()) return rates;
  for (int id : d.unlabeled_ids)
    for (int m = 0; m < d.modalities; ++m)
      if (!d.samples[id].available[m]) rates[m] += 1.0;
  for (double& r : rates) r /= static_cast<double>(d.unlabeled_ids.size());
  return rates;
}

struct SampleNodes {
  std::vector<int> feats;  // per modality, -1 until filled
  int fused = -1;
};

// Encodes one augmented view and fills missing slots by recovery or zeros.
inline SampleNodes build_view(Tape& t, const ParamNodes& pn, const ModelParams& params,
                              const std::vector<std::vector<double>>& view, const MultimodalSample& s,
                              ReconstructMode mode, const SubspaceNodes* sn) {
  const int m_count = static_cast<int>(s.available.size());
  SampleNodes out;
  out.feats.assign(m_count, -1);
  std::vector<std::pair<int, int>> sources;
  for (int m = 0; m < m_count; ++m) {
    if (!s.available[m]) continue;
    const int x = t.leaf(view[m]);
    out.feats[m] = encode_node(t, pn, params, m, x);
    sources.emplace_back(m, out.feats[m]);
  }
  const std::vector<double> zeros(params.cfg.feature, 0.0);
  for (int m = 0; m < m_count; ++m) {
    if (out.feats[m] >= 0) continue;
    if (mode == ReconstructMode::subspace_map && sn)
      out.feats[m] = recover_node(t, pn, params, *sn, sources, m);
    else
      out.feats[m] = t.leaf(zeros);
  }
  out.fused = t.concat(out.feats);
  return out;
}

}  // namespace detail

// One full training run: per batch, the supervised, pseudo-label, contrastive
// and reconstruction terms are assembled into a single scalar and optimized
// jointly with one Adam step; thresholds and subspaces refresh at epoch
// boundaries.
inline RunRecord train(const Dataset& data, const Dataset* test, ModelParams& params, AdamState& adam,
                       const TrainConfig& cfg, const BatchHook& hook = nullptr,
                       std::vector<PcaSubspace>* out_subspaces = nullptr) {
  if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (cfg.contrastive && cfg.batch_size < 2)
    throw std::invalid_argument("train: contrastive loss needs batch_size >= 2");
  if (data.samples.empty()) throw std::invalid_argument("train: empty dataset");
  if (data.classes != params.cfg.classes || data.modalities != params.cfg.modalities())
    throw std::invalid_argument("train: dataset and model dimensions disagree");

  ReconstructMode mode = cfg.reconstruct.mode;
  if (mode == ReconstructMode::subspace_map) {
    if (data.modalities < 2) {
      if (!cfg.quiet) std::cerr << "train: single modality, reconstruction disabled\n";
      mode = ReconstructMode::none;
    } else {
      for (int id : data.labeled_ids)
        for (int m = 0; m < data.modalities; ++m)
          if (!data.samples[id].available[m])
            throw std::invalid_argument("train: subspace_map requires modality-complete labeled samples");
      if (static_cast<int>(data.labeled_ids.size()) < cfg.reconstruct.k)
        throw std::invalid_argument("train: fewer labeled samples than subspace k");
    }
  }

  Rng rng(Rng(cfg.seed).fork(3).next_u64());
  const auto labeled_counts = data.labeled_class_counts();
  const auto rates = cfg.missing_rates.empty() ? detail::inferred_missing_rates(data) : cfg.missing_rates;

  ThresholdState state = make_threshold_state(data.classes, cfg.tau, cfg.tau_high);
  if (cfg.adaptive_threshold && !data.labeled_ids.empty()) {
    update_class_stats(state, {}, labeled_counts);
    update_thresholds(state);
  }

  const int n_l = static_cast<int>(data.labeled_ids.size());
  const int n_u = static_cast<int>(data.unlabeled_ids.size());
  const int batches = (std::max(n_l, n_u) + cfg.batch_size - 1) / cfg.batch_size;

  detail::LabeledCycler cycler(data.labeled_ids, rng);
  std::vector<PcaSubspace> subs;
  Tape tape;
  auto grads = zero_grads(params);
  RunRecord record;

  std::vector<int> labeled_batch;
  std::vector<int> epoch_perm;
  std::vector<PseudoLabelDecision> epoch_decisions;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (mode == ReconstructMode::subspace_map && epoch % std::max(1, cfg.reconstruct.refresh) == 0)
      subs = fit_subspaces(params, data, cfg.reconstruct);

    if (n_u > 0) {
      epoch_perm = data.unlabeled_ids;
      rng.shuffle(epoch_perm);
    }
    epoch_decisions.clear();

    EpochRecord er;
    er.epoch = epoch;
    er.tau = state.tau;
    er.d_kl = state.d_kl;

    for (int b = 0; b < batches; ++b) {
      tape.clear();
      const ParamNodes pn = bind_params(tape, params);
      SubspaceNodes sn;
      if (mode == ReconstructMode::subspace_map) sn = bind_subspaces(tape, subs);

      cycler.take(n_l > 0 ? cfg.batch_size : 0, labeled_batch);
      const int u_begin = b * cfg.batch_size;
      const int u_end = std::min(n_u, u_begin + cfg.batch_size);

      const int hidden_m = (mode == ReconstructMode::subspace_map && !labeled_batch.empty())
                               ? choose_hidden_modality(rng, rates)
                               : -1;

      // Labeled portion: supervised loss on strong views, reconstruction loss
      // with one modality artificially hidden.
      std::vector<int> strong_logits_l;
      std::vector<int> labels_l;
      std::vector<RecoverTerm> recover_terms;
      for (int id : labeled_batch) {
        const auto& s = data.samples[id];
        const auto strong = augment_strong(s, cfg.augment, rng);
        const auto view = detail::build_view(tape, pn, params, strong, s, mode, nullptr);
        strong_logits_l.push_back(classifier_node(tape, pn, params, view.fused));
        labels_l.push_back(*s.label);

        if (hidden_m >= 0) {
          bool complete = true;
          for (int m = 0; m < data.modalities; ++m) complete = complete && s.available[m];
          if (!complete) continue;
          const auto weak = augment_weak(s, cfg.augment, rng);
          std::vector<int> true_feats(data.modalities);
          std::vector<std::pair<int, int>> sources;
          for (int m = 0; m < data.modalities; ++m) {
            true_feats[m] = encode_node(tape, pn, params, m, tape.leaf(weak[m]));
            if (m != hidden_m) sources.emplace_back(m, true_feats[m]);
          }
          RecoverTerm term;
          term.zhat = recover_node(tape, pn, params, sn, sources, hidden_m);
          term.ztrue = true_feats[hidden_m];
          std::vector<int> rec_feats = true_feats;
          rec_feats[hidden_m] = term.zhat;
          term.logits_rec = classifier_node(tape, pn, params, tape.concat(rec_feats));
          // Reference prediction from the true features, detached.
          const int true_fused = tape.concat(true_feats);
          const auto true_logits = classifier_logits_value(
              params, std::vector<double>(tape.val(true_fused).begin(), tape.val(true_fused).end()));
          term.target_probs = tape.leaf(softmax(true_logits));
          recover_terms.push_back(term);
        }
      }

      // Unlabeled portion: recover or zero-fill, decide on the weak view,
      // consistency loss for accepted samples, contrastive for the rest.
      std::vector<int> weak_fused_u, strong_fused_u, strong_logits_u;
      std::vector<PseudoLabelDecision> batch_decisions;
      std::vector<bool> low_conf;
      for (int ui = u_begin; ui < u_end; ++ui) {
        const int id = epoch_perm[ui];
        const auto& s = data.samples[id];
        const auto weak = augment_weak(s, cfg.augment, rng);
        const auto strong = augment_strong(s, cfg.augment, rng);
        const auto weak_view = detail::build_view(tape, pn, params, weak, s, mode, &sn);
        const auto strong_view = detail::build_view(tape, pn, params, strong, s, mode, &sn);
        weak_fused_u.push_back(weak_view.fused);
        strong_fused_u.push_back(strong_view.fused);
        strong_logits_u.push_back(classifier_node(tape, pn, params, strong_view.fused));

        const auto weak_logits = classifier_logits_value(
            params, std::vector<double>(tape.val(weak_view.fused).begin(), tape.val(weak_view.fused).end()));
        const auto decision = decide(softmax(weak_logits), state, id);
        batch_decisions.push_back(decision);
        low_conf.push_back(!decision.accepted);
      }
      epoch_decisions.insert(epoch_decisions.end(), batch_decisions.begin(), batch_decisions.end());

      const int l_cls_node = loss_cls(tape, strong_logits_l, labels_l);
      const int l_pl_node = loss_pl(tape, strong_logits_u, batch_decisions);
      const int l_con_node = cfg.contrastive
                                 ? loss_con(tape, weak_fused_u, strong_fused_u, cfg.contrastive_cfg, low_conf)
                                 : tape.constant_scalar(0.0);
      const int l_rec_node = mode == ReconstructMode::subspace_map
                                 ? loss_recover(tape, recover_terms, cfg.reconstruct.lambda_r)
                                 : tape.constant_scalar(0.0);

      int accepted = 0;
      for (const auto& d : batch_decisions) accepted += d.accepted ? 1 : 0;

      // Per-component normalization keeps the lambdas meaningful as batch
      // composition shifts; L_con and L_recover are already means.
      const double inv_cls = labels_l.empty() ? 0.0 : 1.0 / static_cast<double>(labels_l.size());
      const double inv_pl = accepted == 0 ? 0.0 : 1.0 / static_cast<double>(accepted);
      const std::vector<int> parts{l_cls_node, l_pl_node, l_con_node, l_rec_node};
      const std::vector<double> coefs{inv_cls, cfg.lambda_p * inv_pl, cfg.lambda_c, 1.0};
      const int total = tape.sum_scaled(parts, coefs);

      tape.backward(total);
      for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0);
      tape.harvest(grads);
      adam_step(adam, params, grads);

      BatchTrace trace;
      trace.epoch = epoch;
      trace.batch = b;
      trace.l_cls = tape.scalar(l_cls_node) * inv_cls;
      trace.l_pl = tape.scalar(l_pl_node) * inv_pl;
      trace.l_con = tape.scalar(l_con_node);
      trace.l_recover = tape.scalar(l_rec_node);
      trace.l_all = tape.scalar(total);
      trace.unlabeled = static_cast<int>(batch_decisions.size());
      trace.accepted = accepted;
      trace.contrastive = trace.unlabeled - accepted;
      er.l_cls += trace.l_cls;
      er.l_pl += trace.l_pl;
      er.l_con += trace.l_con;
      er.l_recover += trace.l_recover;
      er.l_all += trace.l_all;
      if (hook) hook(trace);
    }

    update_class_stats(state, epoch_decisions, labeled_counts);
    if (cfg.adaptive_threshold) update_thresholds(state);

    er.l_cls /= batches;
    er.l_pl /= batches;
    er.l_con /= batches;
    er.l_recover /= batches;
    er.l_all /= batches;
    er.sigma_u = state.sigma_u;
    long accepted_total = 0;
    for (long c : state.sigma_u) accepted_total += c;
    er.accept_rate = epoch_decisions.empty()
                         ? 0.0
                         : static_cast<double>(accepted_total) / static_cast<double>(epoch_decisions.size());

    if (test && cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || epoch == cfg.epochs - 1)) {
      er.eval = evaluate_model(params, *test, mode, subs.empty() ? nullptr : &subs, epoch);
      if (record.convergence_epoch < 0 && er.eval->accuracy >= cfg.target_accuracy)
        record.convergence_epoch = epoch;
    }
    record.epochs.push_back(std::move(er));
  }

  if (!record.epochs.empty() && record.epochs.back().eval)
    record.final = *record.epochs.back().eval;
  else if (test)
    record.final = evaluate_model(params, *test, mode, subs.empty() ? nullptr : &subs, cfg.epochs - 1);
  if (out_subspaces) *out_subspaces = subs;
  return record;
}

}  // namespace mmssl
