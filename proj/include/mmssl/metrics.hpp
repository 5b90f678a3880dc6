#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "mmssl/numeric.hpp"

namespace mmssl {

// Classification metrics. Precision/recall/F1 are one-vs-rest per class; the
// confusion matrix has true classes as rows and predictions as columns.
struct Metrics {
  double accuracy = 0.0;
  std::vector<double> precision, recall, f1;
  Matrix confusion;
  int epoch = -1;
};

inline Metrics metrics_from_confusion(const Matrix& cm, int epoch = -1) {
  const int c = cm.rows;
  Metrics m;
  m.epoch = epoch;
  m.confusion = cm;
  m.precision.assign(c, 0.0);
  m.recall.assign(c, 0.0);
  m.f1.assign(c, 0.0);
  double total = 0.0, correct = 0.0;
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j) {
      total += cm(i, j);
      if (i == j) correct += cm(i, j);
    }
  if (total == 0.0) throw std::invalid_argument("metrics: empty confusion matrix");
  m.accuracy = correct / total;
  for (int k = 0; k < c; ++k) {
    double tp = cm(k, k), fp = 0.0, fn = 0.0;
    for (int i = 0; i < c; ++i) {
      if (i != k) {
        fp += cm(i, k);
        fn += cm(k, i);
      }
    }
    m.precision[k] = (tp + fp) > 0.0 ? tp / (tp + fp) : 0.0;
    m.recall[k] = (tp + fn) > 0.0 ? tp / (tp + fn) : 0.0;
    m.f1[k] = (m.precision[k] + m.recall[k]) > 0.0
                  ? 2.0 * m.precision[k] * m.recall[k] / (m.precision[k] + m.recall[k])
                  : 0.0;
  }
  return m;
}

inline Metrics metrics_from_pairs(std::span<const int> truth, std::span<const int> predicted, int classes,
                                  int epoch = -1) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("metrics: size mismatch");
  Matrix cm(classes, classes);
  for (size_t i = 0; i < truth.size(); ++i) cm(truth[i], predicted[i]) += 1.0;
  return metrics_from_confusion(cm, epoch);
}

}  // namespace mmssl
