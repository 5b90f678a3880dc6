#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mmssl/reconstruct.hpp"
#include "mmssl/rng.hpp"
#include "tiny_losses.hpp"

using namespace mmssl;

namespace {

// Orthonormal F x K matrix via Gram-Schmidt on random columns.
Matrix random_orthonormal(int f, int k, Rng& rng) {
  Matrix v(f, k);
  for (int c = 0; c < k; ++c) {
    std::vector<double> col(f);
    for (double& x : col) x = rng.normal();
    for (int prev = 0; prev < c; ++prev) {
      double dot = 0.0;
      for (int r = 0; r < f; ++r) dot += col[r] * v(r, prev);
      for (int r = 0; r < f; ++r) col[r] -= dot * v(r, prev);
    }
    double norm = 0.0;
    for (double x : col) norm += x * x;
    norm = std::sqrt(norm);
    for (int r = 0; r < f; ++r) v(r, c) = col[r] / norm;
  }
  return v;
}

PcaSubspace make_subspace(int modality, Matrix v, std::vector<double> mean) {
  PcaSubspace s;
  s.modality = modality;
  s.components = std::move(v);
  s.mean = std::move(mean);
  s.fitted_on = 0;
  return s;
}

// An encoder that is affine on bounded inputs: relu preactivations pushed
// positive with a large bias.
ModelParams affine_encoder_model(int d0, int d1, int f, std::uint64_t seed) {
  ModelConfig mc;
  mc.modality_dims = {d0, d1};
  mc.hidden = f;
  mc.feature = f;
  mc.classes = 2;
  mc.subspace_k = 2;
  ModelParams p = init_model(mc, seed);
  for (int m = 0; m < 2; ++m)
    for (double& b : p.tensors[p.enc_b1(m)].v) b = 25.0;
  return p;
}

}  // namespace

TEST_CASE("fit_subspaces is deterministic and matches a direct refit") {
  ModelParams p = affine_encoder_model(5, 4, 6, 3);
  Dataset d;
  d.classes = 2;
  d.modalities = 2;
  d.modality_dims = {5, 4};
  Rng rng(9);
  for (int i = 0; i < 12; ++i) {
    MultimodalSample s;
    s.id = i;
    s.label = i % 2;
    s.available = {true, true};
    s.inputs.resize(2);
    for (int m = 0; m < 2; ++m) {
      s.inputs[m].resize(d.modality_dims[m]);
      for (double& v : s.inputs[m]) v = rng.normal();
    }
    d.samples.push_back(s);
    d.labeled_ids.push_back(i);
  }
  ReconstructConfig cfg;
  cfg.k = 3;
  const auto a = fit_subspaces(p, d, cfg);
  const auto b = fit_subspaces(p, d, cfg);
  REQUIRE(a.size() == 2);
  for (int m = 0; m < 2; ++m) {
    CHECK(a[m].components.data == b[m].components.data);
    CHECK(a[m].mean == b[m].mean);
    CHECK(a[m].fitted_on == 12);
    // direct refit through encode_value + pca_fit
    Matrix z(12, 6);
    for (int i = 0; i < 12; ++i) {
      const auto feat = encode_value(p, m, d.samples[i].inputs[m]);
      for (int c = 0; c < 6; ++c) z(i, c) = feat[c];
    }
    const auto direct = pca_fit(z, 3);
    CHECK(a[m].components.data == direct.components.data);
  }

  cfg.k = 13;  // more components than labeled samples
  CHECK_THROWS_AS(fit_subspaces(p, d, cfg), std::invalid_argument);
}

TEST_CASE("fit_subspaces captures an exact rank-k feature subspace") {
  const int k = 2, f = 6;
  ModelParams p = affine_encoder_model(5, 4, f, 7);
  Dataset d;
  d.classes = 2;
  d.modalities = 2;
  d.modality_dims = {5, 4};
  Rng rng(21);
  // inputs confined to a k-dimensional span per modality
  std::vector<Matrix> basis;
  basis.push_back(Matrix(5, k));
  basis.push_back(Matrix(4, k));
  for (auto& b : basis)
    for (double& v : b.data) v = rng.normal();
  for (int i = 0; i < 10; ++i) {
    MultimodalSample s;
    s.id = i;
    s.label = i % 2;
    s.available = {true, true};
    s.inputs.resize(2);
    std::vector<double> c(k);
    for (double& v : c) v = rng.normal();
    for (int m = 0; m < 2; ++m) {
      s.inputs[m].assign(d.modality_dims[m], 0.0);
      for (int r = 0; r < d.modality_dims[m]; ++r)
        for (int j = 0; j < k; ++j) s.inputs[m][r] += basis[m](r, j) * c[j];
    }
    d.samples.push_back(s);
    d.labeled_ids.push_back(i);
  }
  ReconstructConfig cfg;
  cfg.k = k;
  const auto subs = fit_subspaces(p, d, cfg);
  for (int m = 0; m < 2; ++m) {
    // affine encoder + rank-k inputs => project/backproject is exact
    for (int i = 0; i < 10; ++i) {
      const auto z = encode_value(p, m, d.samples[i].inputs[m]);
      std::vector<double> centered(f), proj(k, 0.0);
      for (int j = 0; j < f; ++j) centered[j] = z[j] - subs[m].mean[j];
      for (int j = 0; j < f; ++j)
        for (int c = 0; c < k; ++c) proj[c] += centered[j] * subs[m].components(j, c);
      for (int j = 0; j < f; ++j) {
        double back = 0.0;
        for (int c = 0; c < k; ++c) back += subs[m].components(j, c) * proj[c];
        CHECK(std::abs(back - centered[j]) < 1e-6);
      }
    }
  }
}

TEST_CASE("recover with a zero map is mean imputation") {
  ModelParams p = affine_encoder_model(5, 4, 6, 11);
  p.cfg.subspace_k = 2;
  for (double& v : p.tensors[p.map_w(1)].v) v = 0.0;
  Rng rng(2);
  std::vector<PcaSubspace> subs;
  std::vector<double> mean0(6, 0.0), mean1(6);
  for (double& v : mean1) v = rng.normal();
  subs.push_back(make_subspace(0, random_orthonormal(6, 2, rng), mean0));
  subs.push_back(make_subspace(1, random_orthonormal(6, 2, rng), mean1));

  std::vector<double> z0(6);
  for (double& v : z0) v = rng.normal();
  const auto zhat = recover_value(p, subs, {{0, z0}}, 1);
  for (int j = 0; j < 6; ++j) CHECK(zhat[j] == Catch::Approx(mean1[j]).margin(1e-12));
}

TEST_CASE("recover with one source matches the single-source formula") {
  const int f = 6, k = 2;
  ModelParams p = affine_encoder_model(5, 4, f, 13);
  p.cfg.subspace_k = k;
  Rng rng(3);
  std::vector<double> mean0(f), mean1(f);
  for (double& v : mean0) v = rng.normal();
  for (double& v : mean1) v = rng.normal();
  std::vector<PcaSubspace> subs;
  subs.push_back(make_subspace(0, random_orthonormal(f, k, rng), mean0));
  subs.push_back(make_subspace(1, random_orthonormal(f, k, rng), mean1));

  std::vector<double> z0(f);
  for (double& v : z0) v = rng.normal();
  const auto& w = p.tensors[p.map_w(1)];

  // by hand: ((z0 - mu0) W) V1^T + mu1, divisor 1
  std::vector<double> coords(k, 0.0);
  for (int r = 0; r < f; ++r)
    for (int c = 0; c < k; ++c) coords[c] += (z0[r] - mean0[r]) * w.v[r * k + c];
  std::vector<double> expect(mean1);
  for (int r = 0; r < f; ++r)
    for (int c = 0; c < k; ++c) expect[r] += subs[1].components(r, c) * coords[c];

  const auto zhat = recover_value(p, subs, {{0, z0}}, 1);
  for (int j = 0; j < f; ++j) CHECK(zhat[j] == Catch::Approx(expect[j]).margin(1e-12));
}

TEST_CASE("recover nails an exact linear relation between subspaces") {
  const int f = 8, k = 3;
  ModelConfig mc;
  mc.modality_dims = {4, 4};
  mc.hidden = 4;
  mc.feature = f;
  mc.classes = 2;
  mc.subspace_k = k;
  ModelParams p = init_model(mc, 17);
  Rng rng(5);
  Matrix v0 = random_orthonormal(f, k, rng);
  Matrix v1 = random_orthonormal(f, k, rng);
  Matrix r(k, k);
  for (double& v : r.data) v = rng.normal();

  // W = V0 R^T so that coords of the target equal R q
  auto& w = p.tensors[p.map_w(1)].v;
  for (int row = 0; row < f; ++row)
    for (int col = 0; col < k; ++col) {
      double acc = 0.0;
      for (int j = 0; j < k; ++j) acc += v0(row, j) * r(col, j);
      w[row * k + col] = acc;
    }

  std::vector<PcaSubspace> subs;
  subs.push_back(make_subspace(0, v0, std::vector<double>(f, 0.0)));
  subs.push_back(make_subspace(1, v1, std::vector<double>(f, 0.0)));

  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> q(k);
    for (double& v : q) v = rng.normal();
    // z0 = V0 q, z1 = V1 (R q)
    std::vector<double> rq(k, 0.0);
    for (int j = 0; j < k; ++j)
      for (int jj = 0; jj < k; ++jj) rq[j] += r(j, jj) * q[jj];
    std::vector<double> z0(f, 0.0), z1(f, 0.0);
    for (int row = 0; row < f; ++row)
      for (int j = 0; j < k; ++j) {
        z0[row] += v0(row, j) * q[j];
        z1[row] += v1(row, j) * rq[j];
      }

    const auto zhat = recover_value(p, subs, {{0, z0}}, 1);
    for (int j = 0; j < f; ++j) CHECK(std::abs(zhat[j] - z1[j]) < 1e-8);
  }
}

TEST_CASE("recovered vectors lie in the target affine subspace") {
  const int f = 10, k = 3;
  ModelConfig mc;
  mc.modality_dims = {4, 4, 4};
  mc.hidden = 4;
  mc.feature = f;
  mc.classes = 2;
  mc.subspace_k = k;
  ModelParams p = init_model(mc, 19);
  Rng rng(23);
  std::vector<PcaSubspace> subs;
  for (int m = 0; m < 3; ++m) {
    std::vector<double> mean(f);
    for (double& v : mean) v = rng.normal();
    subs.push_back(make_subspace(m, random_orthonormal(f, k, rng), mean));
  }
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::pair<int, std::vector<double>>> sources;
    for (int m = 0; m < 2; ++m) {
      std::vector<double> z(f);
      for (double& v : z) v = rng.normal();
      sources.emplace_back(m, z);
    }
    const auto zhat = recover_value(p, subs, sources, 2);
    // residual after re-projecting onto mu + span(V)
    std::vector<double> centered(f), proj(k, 0.0);
    for (int j = 0; j < f; ++j) centered[j] = zhat[j] - subs[2].mean[j];
    for (int j = 0; j < f; ++j)
      for (int c = 0; c < k; ++c) proj[c] += centered[j] * subs[2].components(j, c);
    for (int j = 0; j < f; ++j) {
      double back = 0.0;
      for (int c = 0; c < k; ++c) back += subs[2].components(j, c) * proj[c];
      CHECK(std::abs(back - centered[j]) < 1e-8);
    }
  }
}

TEST_CASE("loss_recover values") {
  // perfect recovery: MSE 0, consistency term equals the target entropy
  {
    Tape t;
    std::vector<double> z{1.0, 2.0, 3.0};
    std::vector<double> logits{0.4, -0.3};
    const auto target = softmax(logits);
    RecoverTerm term;
    term.zhat = t.leaf(z);
    term.ztrue = t.leaf(z);
    term.logits_rec = t.leaf(logits);
    term.target_probs = t.leaf(target);
    const std::vector<RecoverTerm> terms{term};
    double entropy = 0.0;
    for (double v : target) entropy -= v * std::log(v);
    CHECK(t.scalar(loss_recover(t, terms, 0.5)) == Catch::Approx(0.5 * entropy).margin(1e-12));
    CHECK(t.scalar(loss_recover(t, terms, 0.0)) == Catch::Approx(0.0).margin(1e-15));
    CHECK(entropy >= 0.0);
  }
  // unit offset in every one of 32 coordinates: MSE term is exactly 32
  {
    Tape t;
    std::vector<double> z(32, 0.25), zhat(32, 1.25);
    std::vector<double> logits{0.0, 0.0};
    RecoverTerm term;
    term.zhat = t.leaf(zhat);
    term.ztrue = t.leaf(z);
    term.logits_rec = t.leaf(logits);
    term.target_probs = t.leaf(softmax(logits));
    const std::vector<RecoverTerm> terms{term};
    CHECK(t.scalar(loss_recover(t, terms, 0.0)) == Catch::Approx(32.0).margin(1e-12));
  }
}

TEST_CASE("choose_hidden_modality") {
  Rng rng(31);
  CHECK(choose_hidden_modality(rng, {0.5}) == -1);  // single modality: disabled

  for (int i = 0; i < 50; ++i) CHECK(choose_hidden_modality(rng, {0.0, 0.9, 0.0}) == 1);

  long first = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const int m = choose_hidden_modality(rng, {0.4, 0.0, 0.6});
    REQUIRE((m == 0 || m == 2));
    first += m == 0 ? 1 : 0;
  }
  CHECK(std::abs(first / static_cast<double>(draws) - 0.5) < 0.02);

  // nothing configured missing: uniform over all modalities
  std::vector<long> counts(3, 0);
  for (int i = 0; i < draws; ++i) ++counts[choose_hidden_modality(rng, {0.0, 0.0, 0.0})];
  for (long c : counts) CHECK(std::abs(c / static_cast<double>(draws) - 1.0 / 3) < 0.02);
}

TEST_CASE("training the mapping matrix alone learns an exact linear relation") {
  // features are exact linear images of a shared latent; gradient steps on
  // W^m only must drive held-out recovery error toward zero
  const int f = 8, k = 2, n_train = 120, n_test = 40;
  ModelConfig mc;
  mc.modality_dims = {4, 4};
  mc.hidden = 4;
  mc.feature = f;
  mc.classes = 2;
  mc.subspace_k = k;
  ModelParams p = init_model(mc, 29);
  Rng rng(37);

  Matrix a0(f, k), a1(f, k);
  for (double& v : a0.data) v = rng.normal();
  for (double& v : a1.data) v = rng.normal();
  auto feature_of = [&](const Matrix& a, const std::vector<double>& h) {
    std::vector<double> z(f, 0.0);
    for (int r = 0; r < f; ++r)
      for (int j = 0; j < k; ++j) z[r] += a(r, j) * h[j];
    return z;
  };
  std::vector<std::vector<double>> z0_train, z1_train, z0_test, z1_test;
  for (int i = 0; i < n_train + n_test; ++i) {
    std::vector<double> h(k);
    for (double& v : h) v = rng.normal();
    (i < n_train ? z0_train : z0_test).push_back(feature_of(a0, h));
    (i < n_train ? z1_train : z1_test).push_back(feature_of(a1, h));
  }

  Matrix z1m(n_train, f);
  for (int i = 0; i < n_train; ++i)
    for (int j = 0; j < f; ++j) z1m(i, j) = z1_train[i][j];
  auto fit = pca_fit(z1m, k);
  std::vector<PcaSubspace> subs(2);
  subs[1] = PcaSubspace{1, fit.components, fit.mean, fit.eigenvalues, n_train};
  Matrix z0m(n_train, f);
  for (int i = 0; i < n_train; ++i)
    for (int j = 0; j < f; ++j) z0m(i, j) = z0_train[i][j];
  auto fit0 = pca_fit(z0m, k);
  subs[0] = PcaSubspace{0, fit0.components, fit0.mean, fit0.eigenvalues, n_train};

  AdamState adam = make_adam(p, 0.05);
  Tape t;
  for (int step = 0; step < 300; ++step) {
    t.clear();
    const auto pn = bind_params(t, p);
    const auto sn = bind_subspaces(t, subs);
    std::vector<int> losses;
    std::vector<double> coefs;
    for (int i = 0; i < n_train; ++i) {
      const std::vector<std::pair<int, int>> sources{{0, t.leaf(z0_train[i])}};
      const int zhat = recover_node(t, pn, p, sn, sources, 1);
      losses.push_back(t.sq_dist(zhat, t.leaf(z1_train[i])));
      coefs.push_back(1.0 / n_train);
    }
    const int loss = t.sum_scaled(losses, coefs);
    t.backward(loss);
    auto grads = zero_grads(p);
    t.harvest(grads);
    // mapping matrix only
    for (size_t i = 0; i < grads.size(); ++i)
      if (static_cast<int>(i) != p.map_w(1))
        std::fill(grads[i].begin(), grads[i].end(), 0.0);
    adam_step(adam, p, grads);
  }

  double mse = 0.0, var = 0.0;
  std::vector<double> mean(f, 0.0);
  for (const auto& z : z1_test)
    for (int j = 0; j < f; ++j) mean[j] += z[j] / n_test;
  for (int i = 0; i < n_test; ++i) {
    const auto zhat = recover_value(p, subs, {{0, z0_test[i]}}, 1);
    for (int j = 0; j < f; ++j) {
      mse += (zhat[j] - z1_test[i][j]) * (zhat[j] - z1_test[i][j]) / n_test;
      var += (z1_test[i][j] - mean[j]) * (z1_test[i][j] - mean[j]) / n_test;
    }
  }
  CHECK(mse < 1e-3 * var);
}
