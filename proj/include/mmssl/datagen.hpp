#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmssl/dataset.hpp"
#include "mmssl/numeric.hpp"
#include "mmssl/rng.hpp"

namespace mmssl {

// Periodic availability mask for a rotating sensor: slot i is covered iff
// (i + phase) mod period < round(duty * period).
inline std::vector<bool> rotation_mask(int period, double duty, int n, int phase = 0) {
  if (period < 1) throw std::invalid_argument("rotation_mask: period must be >= 1");
  if (duty <= 0.0 || duty > 1.0) throw std::invalid_argument("rotation_mask: duty must be in (0, 1]");
  const int covered = static_cast<int>(std::llround(duty * period));
  std::vector<bool> mask(n);
  for (int i = 0; i < n; ++i) mask[i] = ((i + phase) % period) < covered;
  return mask;
}

enum class Split { train, test };

struct Generated {
  Dataset data;
  std::vector<std::vector<double>> latents;  // per sample, in-memory only
};

namespace detail {

// Largest-remainder apportionment of `total` into buckets proportional to
// `weights`. Ties go to the lower index.
inline std::vector<int> apportion(const std::vector<double>& weights, int total) {
  const int k = static_cast<int>(weights.size());
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  std::vector<int> counts(k, 0);
  std::vector<std::pair<double, int>> remainders;
  int assigned = 0;
  for (int i = 0; i < k; ++i) {
    const double quota = wsum > 0 ? weights[i] / wsum * total : 0.0;
    counts[i] = static_cast<int>(std::floor(quota));
    assigned += counts[i];
    remainders.push_back({quota - counts[i], i});
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int r = 0; r < total - assigned; ++r) ++counts[remainders[r % k].second];
  return counts;
}

inline void validate(const GenConfig& cfg) {
  if (cfg.classes < 2) throw std::invalid_argument("gen: classes must be >= 2");
  if (static_cast<int>(cfg.class_priors.size()) != cfg.classes)
    throw std::invalid_argument("gen: class_priors length must equal classes");
  double psum = 0.0;
  for (double p : cfg.class_priors) {
    if (p < 0) throw std::invalid_argument("gen: class_priors must be nonnegative");
    psum += p;
  }
  if (std::abs(psum - 1.0) > 1e-9) throw std::invalid_argument("gen: class_priors must sum to 1");
  if (cfg.modalities < 1) throw std::invalid_argument("gen: modalities must be >= 1");
  if (static_cast<int>(cfg.modality_dims.size()) != cfg.modalities)
    throw std::invalid_argument("gen: modality_dims length must equal modalities");
  if (cfg.n < 1) throw std::invalid_argument("gen: n must be >= 1");
  if (cfg.labeling_rate < 0.0 || cfg.labeling_rate > 1.0)
    throw std::invalid_argument("gen: labeling_rate must be in [0, 1]");
  if (cfg.latent_dim < cfg.classes)
    throw std::invalid_argument("gen: latent_dim must be >= classes");
  for (const auto& ms : cfg.missing) {
    if (ms.rate < 0.0 || ms.rate > 1.0) throw std::invalid_argument("gen: missing rate must be in [0, 1]");
    if (ms.pattern == MissingPattern::rotation) {
      const double duty = ms.duty > 0 ? ms.duty : 1.0 - ms.rate;
      if (duty <= 0.0 || duty > 1.0) throw std::invalid_argument("gen: rotation duty must be in (0, 1]");
      if (ms.period < 1) throw std::invalid_argument("gen: rotation period must be >= 1");
    }
  }
  if (std::llround(cfg.labeling_rate * cfg.n) < cfg.classes)
    throw std::invalid_argument("gen: labeling_rate * n below class count, cannot stratify");
}

// Class means sit at the vertices of a centered regular simplex scaled so all
// pairwise distances equal class_separation.
inline std::vector<std::vector<double>> class_means(const GenConfig& cfg) {
  std::vector<std::vector<double>> mu(cfg.classes, std::vector<double>(cfg.latent_dim, 0.0));
  const double scale = cfg.class_separation / std::sqrt(2.0);
  for (int c = 0; c < cfg.classes; ++c) {
    mu[c][c] = scale;
    for (int d = 0; d < cfg.classes; ++d) mu[c][d] -= scale / cfg.classes;
  }
  return mu;
}

inline double obs_noise_for(const GenConfig& cfg, int m) {
  if (cfg.obs_noise_std.empty()) return 0.0;
  if (m < static_cast<int>(cfg.obs_noise_std.size())) return cfg.obs_noise_std[m];
  return cfg.obs_noise_std.back();
}

}  // namespace detail

// Draws a synthetic multimodal dataset. Structural parameters (class means,
// per-modality mixing maps) depend only on cfg.seed, so the train and test
// splits of one config describe the same underlying population.
inline Generated generate_full(const GenConfig& cfg, Split split = Split::train) {
  detail::validate(cfg);
  const int count = split == Split::train ? cfg.n : cfg.n_test;
  if (count < 1) throw std::invalid_argument("gen: split sample count must be >= 1");

  Rng structure(Rng(cfg.seed).fork(0).next_u64());
  Rng draw(Rng(cfg.seed).fork(split == Split::train ? 1 : 2).next_u64());

  const auto mu = detail::class_means(cfg);
  std::vector<Matrix> mixing(cfg.modalities);
  for (int m = 0; m < cfg.modalities; ++m) {
    mixing[m] = Matrix(cfg.modality_dims[m], cfg.latent_dim);
    const double s = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
    for (double& v : mixing[m].data) v = s * structure.normal();
  }

  // Class assignment: exact largest-remainder apportionment of the priors,
  // then a shuffle, so empirical counts stay within +-1 of priors * count.
  std::vector<int> labels_per_id;
  {
    const auto counts = detail::apportion(cfg.class_priors, count);
    for (int c = 0; c < cfg.classes; ++c) labels_per_id.insert(labels_per_id.end(), counts[c], c);
    draw.shuffle(labels_per_id);
  }

  Generated out;
  Dataset& d = out.data;
  d.classes = cfg.classes;
  d.modalities = cfg.modalities;
  d.modality_dims = cfg.modality_dims;

  std::vector<std::vector<std::vector<double>>> inputs(count);
  out.latents.resize(count);
  for (int i = 0; i < count; ++i) {
    std::vector<double> u(cfg.latent_dim);
    for (int k = 0; k < cfg.latent_dim; ++k) u[k] = mu[labels_per_id[i]][k] + cfg.noise_std * draw.normal();
    out.latents[i] = u;
    inputs[i].resize(cfg.modalities);
    for (int m = 0; m < cfg.modalities; ++m) {
      std::vector<double> x(cfg.modality_dims[m], 0.0);
      for (int r = 0; r < cfg.modality_dims[m]; ++r) {
        double acc = 0.0;
        for (int k = 0; k < cfg.latent_dim; ++k) acc += mixing[m](r, k) * u[k];
        x[r] = acc;
      }
      const double sigma = detail::obs_noise_for(cfg, m);
      if (sigma > 0)
        for (double& v : x) v += sigma * draw.normal();
      inputs[i][m] = std::move(x);
    }
  }

  // Label assignment. The test split is fully labeled ground truth; the train
  // split gets a class-stratified subset so every class has at least one label.
  std::vector<bool> labeled(count, split == Split::test);
  if (split == Split::train) {
    if (cfg.labeling_rate >= 1.0) {
      labeled.assign(count, true);
    } else {
      const int target = static_cast<int>(std::llround(cfg.labeling_rate * count));
      std::vector<std::vector<int>> by_class(cfg.classes);
      for (int i = 0; i < count; ++i) by_class[labels_per_id[i]].push_back(i);
      std::vector<double> weights(cfg.classes);
      for (int c = 0; c < cfg.classes; ++c) weights[c] = static_cast<double>(by_class[c].size());
      auto quotas = detail::apportion(weights, target);
      for (int c = 0; c < cfg.classes; ++c) {
        while (quotas[c] < 1 || quotas[c] > static_cast<int>(by_class[c].size())) {
          // Borrow from / give to the class with the most headroom.
          if (quotas[c] < 1) {
            int donor = -1;
            for (int o = 0; o < cfg.classes; ++o)
              if (o != c && quotas[o] > 1 && (donor < 0 || quotas[o] > quotas[donor])) donor = o;
            if (donor < 0) throw std::invalid_argument("gen: cannot stratify labels across classes");
            --quotas[donor];
            ++quotas[c];
          } else {
            int receiver = -1;
            for (int o = 0; o < cfg.classes; ++o)
              if (o != c && quotas[o] < static_cast<int>(by_class[o].size()) &&
                  (receiver < 0 || quotas[o] < quotas[receiver]))
                receiver = o;
            if (receiver < 0) throw std::invalid_argument("gen: cannot stratify labels across classes");
            --quotas[c];
            ++quotas[receiver];
          }
        }
      }
      for (int c = 0; c < cfg.classes; ++c) {
        draw.shuffle(by_class[c]);
        for (int r = 0; r < quotas[c]; ++r) labeled[by_class[c][r]] = true;
      }
    }
  }

  // Availability masks. Labeled samples stay modality-complete unless
  // explicitly overridden; the rotation pattern runs over the id sequence.
  std::vector<std::vector<bool>> avail(count, std::vector<bool>(cfg.modalities, true));
  if (split == Split::train) {
    for (int m = 0; m < cfg.modalities && m < static_cast<int>(cfg.missing.size()); ++m) {
      const MissingSpec& ms = cfg.missing[m];
      if (ms.pattern == MissingPattern::rotation) {
        const double duty = ms.duty > 0 ? ms.duty : 1.0 - ms.rate;
        const auto mask = rotation_mask(ms.period, duty, count, ms.phase);
        for (int i = 0; i < count; ++i) avail[i][m] = mask[i];
      } else if (ms.rate > 0.0) {
        for (int i = 0; i < count; ++i) {
          if (labeled[i] && !cfg.missing_on_labeled) continue;  // no draw spent
          avail[i][m] = draw.uniform() >= ms.rate;
        }
      }
      if (!cfg.missing_on_labeled)
        for (int i = 0; i < count; ++i)
          if (labeled[i]) avail[i][m] = true;
    }
    // Never drop every modality of a sample: keep the one with the lowest
    // configured missing rate (lowest index on ties).
    for (int i = 0; i < count; ++i) {
      bool any = false;
      for (int m = 0; m < cfg.modalities; ++m) any = any || avail[i][m];
      if (!any) {
        int keep = 0;
        double best = 2.0;
        for (int m = 0; m < cfg.modalities; ++m) {
          const double rate = m < static_cast<int>(cfg.missing.size()) ? cfg.missing[m].rate : 0.0;
          if (rate < best) {
            best = rate;
            keep = m;
          }
        }
        avail[i][keep] = true;
      }
    }
  }

  for (int i = 0; i < count; ++i) {
    MultimodalSample s;
    s.id = i;
    if (labeled[i]) s.label = labels_per_id[i];
    s.available.assign(cfg.modalities, false);
    s.inputs.resize(cfg.modalities);
    for (int m = 0; m < cfg.modalities; ++m) {
      if (!avail[i][m]) continue;
      s.available[m] = true;
      s.inputs[m] = std::move(inputs[i][m]);
    }
    if (labeled[i])
      d.labeled_ids.push_back(i);
    else
      d.unlabeled_ids.push_back(i);
    d.samples.push_back(std::move(s));
  }
  return out;
}

inline Dataset generate(const GenConfig& cfg, Split split = Split::train) {
  return generate_full(cfg, split).data;
}

// Injects the configured missingness into an existing (complete) dataset,
// e.g. to stress a test split. Ignores the labeled/unlabeled distinction.
inline void apply_missing(Dataset& d, const GenConfig& cfg, std::uint64_t salt = 99) {
  Rng rng(Rng(cfg.seed).fork(salt).next_u64());
  const int count = static_cast<int>(d.samples.size());
  for (int m = 0; m < d.modalities && m < static_cast<int>(cfg.missing.size()); ++m) {
    const MissingSpec& ms = cfg.missing[m];
    if (ms.pattern == MissingPattern::rotation) {
      const double duty = ms.duty > 0 ? ms.duty : 1.0 - ms.rate;
      const auto mask = rotation_mask(ms.period, duty, count, ms.phase);
      for (int i = 0; i < count; ++i)
        if (!mask[i]) d.samples[i].available[m] = false;
    } else if (ms.rate > 0.0) {
      for (int i = 0; i < count; ++i)
        if (rng.uniform() < ms.rate) d.samples[i].available[m] = false;
    }
  }
  for (auto& s : d.samples) {
    bool any = false;
    for (int m = 0; m < d.modalities; ++m) any = any || s.available[m];
    if (!any) {
      int keep = 0;
      double best = 2.0;
      for (int m = 0; m < d.modalities; ++m) {
        const double rate = m < static_cast<int>(cfg.missing.size()) ? cfg.missing[m].rate : 0.0;
        if (rate < best) {
          best = rate;
          keep = m;
        }
      }
      s.available[keep] = true;
    }
    for (int m = 0; m < d.modalities; ++m)
      if (!s.available[m]) s.inputs[m].clear();
  }
}

// Weak view a(x): the inputs, optionally with light Gaussian noise.
inline std::vector<std::vector<double>> augment_weak(const MultimodalSample& s, const AugmentConfig& cfg, Rng& rng) {
  std::vector<std::vector<double>> out(s.inputs.size());
  for (size_t m = 0; m < s.inputs.size(); ++m) {
    if (!s.available[m]) continue;
    out[m] = s.inputs[m];
    if (cfg.weak_noise_std > 0)
      for (double& v : out[m]) v += cfg.weak_noise_std * rng.normal();
  }
  return out;
}

// Strong view A(x): heavier Gaussian noise, then a fixed fraction of the
// coordinates of each available modality zeroed.
inline std::vector<std::vector<double>> augment_strong(const MultimodalSample& s, const AugmentConfig& cfg, Rng& rng) {
  std::vector<std::vector<double>> out(s.inputs.size());
  for (size_t m = 0; m < s.inputs.size(); ++m) {
    if (!s.available[m]) continue;
    out[m] = s.inputs[m];
    if (cfg.strong_noise_std > 0)
      for (double& v : out[m]) v += cfg.strong_noise_std * rng.normal();
    const int d = static_cast<int>(out[m].size());
    const int k = static_cast<int>(std::llround(cfg.strong_mask_frac * d));
    if (k > 0) {
      std::vector<int> idx(d);
      for (int i = 0; i < d; ++i) idx[i] = i;
      for (int i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.uniform_int(d - i)]);
      for (int i = 0; i < k; ++i) out[m][idx[i]] = 0.0;
    }
  }
  return out;
}

}  // namespace mmssl
