#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mmssl/datagen.hpp"
#include "mmssl/trainer.hpp"

using namespace mmssl;

namespace {

GenConfig supervised_gen() {
  GenConfig g;
  g.seed = 101;
  g.n = 60;
  g.n_test = 40;
  g.class_priors = {0.5, 0.5};
  g.labeling_rate = 1.0;
  g.class_separation = 4.0;
  return g;
}

TrainConfig supervised_cfg() {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.lr = 1e-3;
  cfg.adaptive_threshold = false;
  cfg.contrastive = false;
  cfg.reconstruct.mode = ReconstructMode::none;
  cfg.eval_every = 0;
  cfg.seed = 7;
  return cfg;
}

GenConfig ssl_gen() {
  GenConfig g;
  g.seed = 33;
  g.n = 300;
  g.n_test = 120;
  g.class_priors = {0.9, 0.1};
  g.labeling_rate = 0.1;
  g.class_separation = 4.0;
  g.missing = {MissingSpec{0.5, MissingPattern::uniform}};
  return g;
}

TrainConfig ssl_cfg() {
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 8;
  cfg.lr = 1e-3;
  cfg.adaptive_threshold = true;
  cfg.contrastive = true;
  cfg.reconstruct.mode = ReconstructMode::subspace_map;
  cfg.seed = 5;
  return cfg;
}

ModelConfig model_for(const GenConfig& g, int k = 4) {
  ModelConfig mc;
  mc.modality_dims = g.modality_dims;
  mc.hidden = 16;
  mc.feature = 16;
  mc.classes = g.classes;
  mc.subspace_k = k;
  return mc;
}

bool records_equal(const RunRecord& a, const RunRecord& b) {
  if (a.epochs.size() != b.epochs.size()) return false;
  for (size_t e = 0; e < a.epochs.size(); ++e) {
    const auto& x = a.epochs[e];
    const auto& y = b.epochs[e];
    if (x.l_cls != y.l_cls || x.l_pl != y.l_pl || x.l_con != y.l_con || x.l_recover != y.l_recover ||
        x.l_all != y.l_all || x.tau != y.tau || x.sigma_u != y.sigma_u || x.accept_rate != y.accept_rate)
      return false;
    if (x.eval.has_value() != y.eval.has_value()) return false;
    if (x.eval && x.eval->accuracy != y.eval->accuracy) return false;
  }
  return a.final.accuracy == b.final.accuracy && a.convergence_epoch == b.convergence_epoch;
}

}  // namespace

TEST_CASE("toggles off reduces to a plain supervised loop") {
  const Dataset data = generate(supervised_gen());
  const TrainConfig cfg = supervised_cfg();
  const ModelConfig mc = model_for(supervised_gen());

  // trainer under test
  ModelParams params = init_model(mc, cfg.seed);
  AdamState adam = make_adam(params, cfg.lr);
  std::vector<BatchTrace> traces;
  train(data, nullptr, params, adam, cfg, [&](const BatchTrace& t) { traces.push_back(t); });

  // independent flat loop with the same rng discipline
  ModelParams oracle = init_model(mc, cfg.seed);
  AdamState oracle_adam = make_adam(oracle, cfg.lr);
  Rng rng(Rng(cfg.seed).fork(3).next_u64());
  std::vector<int> ids = data.labeled_ids;
  size_t cursor = ids.size();
  const int batches = (static_cast<int>(ids.size()) + cfg.batch_size - 1) / cfg.batch_size;
  Tape tape;
  size_t trace_idx = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int b = 0; b < batches; ++b) {
      tape.clear();
      const auto pn = bind_params(tape, oracle);
      // batch ids drawn as a block (shuffle on wrap), then augmented
      std::vector<int> batch_ids;
      for (int i = 0; i < cfg.batch_size; ++i) {
        if (cursor == ids.size()) {
          rng.shuffle(ids);
          cursor = 0;
        }
        batch_ids.push_back(ids[cursor++]);
      }
      std::vector<int> logits, labels;
      for (int id : batch_ids) {
        const auto& s = data.samples[id];
        const auto strong = augment_strong(s, cfg.augment, rng);
        std::vector<int> feats;
        for (int m = 0; m < data.modalities; ++m)
          feats.push_back(encode_node(tape, pn, oracle, m, tape.leaf(strong[m])));
        logits.push_back(classifier_node(tape, pn, oracle, tape.concat(feats)));
        labels.push_back(*s.label);
      }
      const int l_cls = loss_cls(tape, logits, labels);
      const std::vector<int> parts{l_cls};
      const std::vector<double> coefs{1.0 / cfg.batch_size};
      const int total = tape.sum_scaled(parts, coefs);
      tape.backward(total);
      auto grads = zero_grads(oracle);
      tape.harvest(grads);
      adam_step(oracle_adam, oracle, grads);

      REQUIRE(trace_idx < traces.size());
      CHECK(traces[trace_idx].l_all == Catch::Approx(tape.scalar(total)).margin(1e-12));
      CHECK(traces[trace_idx].l_cls == Catch::Approx(tape.scalar(l_cls) / cfg.batch_size).margin(1e-12));
      CHECK(traces[trace_idx].l_pl == 0.0);
      CHECK(traces[trace_idx].l_con == 0.0);
      CHECK(traces[trace_idx].l_recover == 0.0);
      ++trace_idx;
    }
  }
  CHECK(trace_idx == traces.size());
  for (size_t i = 0; i < params.tensors.size(); ++i) {
    for (size_t j = 0; j < params.tensors[i].v.size(); ++j)
      REQUIRE(params.tensors[i].v[j] == Catch::Approx(oracle.tensors[i].v[j]).margin(1e-12));
  }
}

TEST_CASE("fixed threshold ablation pins tau to the base at every epoch") {
  const Dataset data = generate(ssl_gen());
  TrainConfig cfg = ssl_cfg();
  cfg.adaptive_threshold = false;
  cfg.epochs = 4;
  ModelParams params = init_model(model_for(ssl_gen()), cfg.seed);
  AdamState adam = make_adam(params, cfg.lr);
  const RunRecord record = train(data, nullptr, params, adam, cfg);
  for (const auto& er : record.epochs)
    for (double tau : er.tau) CHECK(tau == cfg.tau);
}

TEST_CASE("training is deterministic under a fixed seed") {
  const Dataset data = generate(ssl_gen());
  const Dataset test = generate(ssl_gen(), Split::test);
  const TrainConfig cfg = ssl_cfg();
  const ModelConfig mc = model_for(ssl_gen());

  ModelParams p1 = init_model(mc, cfg.seed);
  AdamState a1 = make_adam(p1, cfg.lr);
  const RunRecord r1 = train(data, &test, p1, a1, cfg);

  ModelParams p2 = init_model(mc, cfg.seed);
  AdamState a2 = make_adam(p2, cfg.lr);
  const RunRecord r2 = train(data, &test, p2, a2, cfg);

  CHECK(records_equal(r1, r2));
  for (size_t i = 0; i < p1.tensors.size(); ++i) REQUIRE(p1.tensors[i].v == p2.tensors[i].v);

  ModelParams p3 = init_model(mc, cfg.seed + 1);
  AdamState a3 = make_adam(p3, cfg.lr);
  TrainConfig other = cfg;
  other.seed = cfg.seed + 1;
  const RunRecord r3 = train(data, &test, p3, a3, other);
  CHECK_FALSE(records_equal(r1, r3));
}

TEST_CASE("per-batch partition accounting") {
  const Dataset data = generate(ssl_gen());
  TrainConfig cfg = ssl_cfg();
  cfg.epochs = 2;
  ModelParams params = init_model(model_for(ssl_gen()), cfg.seed);
  AdamState adam = make_adam(params, cfg.lr);
  int batches_with_unlabeled = 0;
  train(data, nullptr, params, adam, cfg, [&](const BatchTrace& t) {
    CHECK(t.accepted + t.contrastive == t.unlabeled);
    CHECK(t.accepted >= 0);
    CHECK(t.contrastive >= 0);
    if (t.unlabeled > 0) ++batches_with_unlabeled;
  });
  CHECK(batches_with_unlabeled > 0);
}

TEST_CASE("recorded l_all recomposes from its components") {
  const Dataset data = generate(ssl_gen());
  TrainConfig cfg = ssl_cfg();
  cfg.epochs = 3;
  ModelParams params = init_model(model_for(ssl_gen()), cfg.seed);
  AdamState adam = make_adam(params, cfg.lr);
  const RunRecord record = train(data, nullptr, params, adam, cfg);
  for (const auto& er : record.epochs) {
    const double recomposed = er.l_cls + cfg.lambda_p * er.l_pl + cfg.lambda_c * er.l_con + er.l_recover;
    CHECK(std::abs(er.l_all - recomposed) <= 1e-12);
  }
}

TEST_CASE("skewed labels keep the minority threshold strictly lower while divergence persists") {
  const Dataset data = generate(ssl_gen());  // 90/10 labeled distribution
  TrainConfig cfg = ssl_cfg();
  cfg.epochs = 8;
  ModelParams params = init_model(model_for(ssl_gen()), cfg.seed);
  AdamState adam = make_adam(params, cfg.lr);
  const RunRecord record = train(data, nullptr, params, adam, cfg);
  int skewed_epochs = 0;
  for (const auto& er : record.epochs) {
    if (er.d_kl > 0.0) {
      CHECK(er.tau[1] < er.tau[0]);
      ++skewed_epochs;
    }
  }
  CHECK(skewed_epochs > 0);
}

TEST_CASE("configuration errors are rejected before training") {
  const Dataset data = generate(ssl_gen());
  ModelParams params = init_model(model_for(ssl_gen()), 1);
  AdamState adam = make_adam(params, 1e-3);

  TrainConfig bad = ssl_cfg();
  bad.batch_size = 1;  // contrastive needs pairs
  CHECK_THROWS_AS(train(data, nullptr, params, adam, bad), std::invalid_argument);

  TrainConfig zero_epochs = ssl_cfg();
  zero_epochs.epochs = 0;
  CHECK_THROWS_AS(train(data, nullptr, params, adam, zero_epochs), std::invalid_argument);

  // subspace_map with labeled samples missing a modality
  GenConfig g = ssl_gen();
  g.missing_on_labeled = true;
  g.missing = {MissingSpec{0.9, MissingPattern::uniform}};
  const Dataset leaky = generate(g);
  TrainConfig cfg = ssl_cfg();
  CHECK_THROWS_AS(train(leaky, nullptr, params, adam, cfg), std::invalid_argument);
}

TEST_CASE("evaluate: metrics against a brute-force oracle on random predictions") {
  Rng rng(77);
  const int c = 3, n = 200;
  std::vector<int> truth(n), pred(n);
  for (int i = 0; i < n; ++i) {
    truth[i] = rng.uniform_int(c);
    pred[i] = rng.uniform_int(c);
  }
  const Metrics m = metrics_from_pairs(truth, pred, c);

  int correct = 0;
  for (int i = 0; i < n; ++i) correct += truth[i] == pred[i] ? 1 : 0;
  CHECK(m.accuracy == Catch::Approx(static_cast<double>(correct) / n).margin(1e-12));

  for (int k = 0; k < c; ++k) {
    int tp = 0, fp = 0, fn = 0;
    for (int i = 0; i < n; ++i) {
      if (pred[i] == k && truth[i] == k) ++tp;
      if (pred[i] == k && truth[i] != k) ++fp;
      if (pred[i] != k && truth[i] == k) ++fn;
    }
    const double prec = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double rec = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    CHECK(m.precision[k] == Catch::Approx(prec).margin(1e-12));
    CHECK(m.recall[k] == Catch::Approx(rec).margin(1e-12));
    const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    CHECK(m.f1[k] == Catch::Approx(f1).margin(1e-12));
    // confusion row sums equal per-class counts
    double row = 0.0;
    for (int j = 0; j < c; ++j) row += m.confusion(k, j);
    int count = 0;
    for (int i = 0; i < n; ++i) count += truth[i] == k ? 1 : 0;
    CHECK(row == Catch::Approx(count).margin(1e-12));
  }
}

TEST_CASE("evaluate: degenerate majority predictor") {
  // constant class-0 predictions on a 90/10 split
  std::vector<int> truth, pred;
  for (int i = 0; i < 100; ++i) {
    truth.push_back(i < 90 ? 0 : 1);
    pred.push_back(0);
  }
  const Metrics m = metrics_from_pairs(truth, pred, 2);
  CHECK(m.accuracy == Catch::Approx(0.9).margin(1e-12));
  CHECK(m.recall[1] == 0.0);
  CHECK(m.recall[0] == 1.0);
  CHECK(m.f1[1] == 0.0);
}

TEST_CASE("evaluate handles missing test modalities per mode and rejects empty sets") {
  GenConfig g = ssl_gen();
  const Dataset data = generate(g);
  Dataset test = generate(g, Split::test);
  apply_missing(test, g);

  TrainConfig cfg = ssl_cfg();
  cfg.epochs = 2;
  ModelParams params = init_model(model_for(g), cfg.seed);
  AdamState adam = make_adam(params, cfg.lr);
  std::vector<PcaSubspace> subs;
  train(data, nullptr, params, adam, cfg, nullptr, &subs);

  const Metrics with_recovery = evaluate_model(params, test, ReconstructMode::subspace_map, &subs);
  const Metrics zero_filled = evaluate_model(params, test, ReconstructMode::zero_fill, nullptr);
  CHECK(with_recovery.accuracy >= 0.0);
  CHECK(zero_filled.accuracy >= 0.0);

  const Dataset empty;
  CHECK_THROWS_AS(evaluate_model(params, empty, ReconstructMode::none, nullptr), std::invalid_argument);
}

TEST_CASE("zero_fill and none modes exclude the reconstruction loss") {
  const Dataset data = generate(ssl_gen());
  for (const auto mode : {ReconstructMode::zero_fill, ReconstructMode::none}) {
    TrainConfig cfg = ssl_cfg();
    cfg.epochs = 2;
    cfg.reconstruct.mode = mode;
    ModelParams params = init_model(model_for(ssl_gen()), cfg.seed);
    AdamState adam = make_adam(params, cfg.lr);
    const RunRecord record = train(data, nullptr, params, adam, cfg);
    for (const auto& er : record.epochs) CHECK(er.l_recover == 0.0);
  }
}

TEST_CASE("single-modality data disables reconstruction with a notice") {
  GenConfig g;
  g.seed = 3;
  g.n = 80;
  g.n_test = 20;
  g.modalities = 1;
  g.modality_dims = {10};
  g.labeling_rate = 0.5;
  const Dataset data = generate(g);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.reconstruct.mode = ReconstructMode::subspace_map;  // must fall back
  cfg.contrastive = true;
  cfg.seed = 2;
  ModelParams params = init_model(model_for(g), cfg.seed);
  AdamState adam = make_adam(params, cfg.lr);
  const RunRecord record = train(data, nullptr, params, adam, cfg);
  for (const auto& er : record.epochs) CHECK(er.l_recover == 0.0);
}
