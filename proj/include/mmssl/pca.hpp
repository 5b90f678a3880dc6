#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mmssl/numeric.hpp"

namespace mmssl {

// Principal subspace of a feature matrix: top-k directions by explained
// variance, ordered descending.
struct PcaResult {
  Matrix components;                // F x K, orthonormal columns
  std::vector<double> mean;         // F (all zeros when fitted uncentered)
  std::vector<double> eigenvalues;  // K, sample-covariance eigenvalues, descending
};

namespace detail {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Deterministic,
// adequate for F <= 64. Returns eigenpairs sorted by descending eigenvalue.
inline void jacobi_eigh(Matrix a, std::vector<double>& evals, Matrix& evecs) {
  const int n = a.rows;
  evecs = Matrix::identity(n);
  double frob = 0.0;
  for (double v : a.data) frob += v * v;
  const double tol = 1e-14 * std::sqrt(std::max(frob, 1e-300));

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(2.0 * off) < tol) break;

    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < n; ++i) {
          const double aip = a(i, p), aiq = a(i, q);
          a(i, p) = c * aip - s * aiq;
          a(i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < n; ++i) {
          const double api = a(p, i), aqi = a(q, i);
          a(p, i) = c * api - s * aqi;
          a(q, i) = s * api + c * aqi;
        }
        for (int i = 0; i < n; ++i) {
          const double vip = evecs(i, p), viq = evecs(i, q);
          evecs(i, p) = c * vip - s * viq;
          evecs(i, q) = s * vip + c * viq;
        }
      }
    }
  }

  evals.resize(n);
  for (int i = 0; i < n; ++i) evals[i] = a(i, i);

  // Stable sort by descending eigenvalue so exact ties keep input order.
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  for (int i = 1; i < n; ++i) {
    int j = i;
    while (j > 0 && evals[order[j - 1]] < evals[order[j]]) {
      std::swap(order[j - 1], order[j]);
      --j;
    }
  }
  std::vector<double> sorted_vals(n);
  Matrix sorted_vecs(n, n);
  for (int k = 0; k < n; ++k) {
    sorted_vals[k] = evals[order[k]];
    for (int i = 0; i < n; ++i) sorted_vecs(i, k) = evecs(i, order[k]);
  }
  evals = std::move(sorted_vals);
  evecs = std::move(sorted_vecs);
}

}  // namespace detail

// Fits the top-k principal directions of `features` (rows are samples).
// Columns of the result are the top right singular vectors of the centered
// matrix; the sign of each column is fixed so its largest-magnitude entry is
// positive. With center=false no mean is removed (mean reported as zeros).
inline PcaResult pca_fit(const Matrix& features, int k, bool center = true) {
  const int n = features.rows;
  const int f = features.cols;
  if (k < 1 || k > std::min(n, f))
    throw std::invalid_argument("pca_fit: k must satisfy 1 <= k <= min(rows, cols)");

  PcaResult out;
  out.mean.assign(f, 0.0);
  if (center) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < f; ++j) out.mean[j] += features(i, j);
    for (int j = 0; j < f; ++j) out.mean[j] /= n;
  }

  // Sample covariance of the (optionally) centered data.
  Matrix cov(f, f);
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < f; ++a) {
      const double da = features(i, a) - out.mean[a];
      if (da == 0.0) continue;
      for (int b = a; b < f; ++b) cov(a, b) += da * (features(i, b) - out.mean[b]);
    }
  }
  for (int a = 0; a < f; ++a)
    for (int b = a; b < f; ++b) {
      cov(a, b) /= denom;
      cov(b, a) = cov(a, b);
    }

  std::vector<double> evals;
  Matrix evecs;
  detail::jacobi_eigh(cov, evals, evecs);

  out.components = Matrix(f, k);
  out.eigenvalues.assign(evals.begin(), evals.begin() + k);
  for (int col = 0; col < k; ++col) {
    int arg = 0;
    double best = 0.0;
    for (int i = 0; i < f; ++i) {
      if (std::abs(evecs(i, col)) > best) {
        best = std::abs(evecs(i, col));
        arg = i;
      }
    }
    const double sign = evecs(arg, col) < 0.0 ? -1.0 : 1.0;
    for (int i = 0; i < f; ++i) out.components(i, col) = sign * evecs(i, col);
  }
  return out;
}

}  // namespace mmssl
