#include "balm/metrics.hpp"

#include <string>

#include "balm/errors.hpp"

namespace balm {

ConfusionMatrix ConfusionMatrix::build(std::span<const int> predicted, std::span<const int> truth, int classes) {
  if (predicted.size() != truth.size()) throw DimensionError("confusion matrix: prediction and truth lengths differ");
  if (classes < 1) throw DomainError("confusion matrix: need at least one class");
  ConfusionMatrix cm{Eigen::MatrixXi::Zero(classes, classes)};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= classes || predicted[i] < 0 || predicted[i] >= classes)
      throw IndexError("confusion matrix: label outside [0, " + std::to_string(classes) + ")");
    ++cm.counts(truth[i], predicted[i]);
  }
  return cm;
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw DimensionError("accuracy: prediction and truth lengths differ");
  if (truth.empty()) throw DomainError("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double weighted_f1(std::span<const int> predicted, std::span<const int> truth, int classes) {
  const auto cm = ConfusionMatrix::build(predicted, truth, classes);
  const auto n = static_cast<double>(truth.size());
  if (n == 0) throw DomainError("weighted_f1: empty input");
  double score = 0.0;
  for (int c = 0; c < classes; ++c) {
    const int support = cm.counts.row(c).sum();
    if (support == 0) continue;
    const double tp = cm.counts(c, c);
    const double predicted_c = cm.counts.col(c).sum();
    // F1 = 2 tp / (predicted + support); zero when tp is zero.
    const double f1 = tp == 0.0 ? 0.0 : 2.0 * tp / (predicted_c + support);
    score += f1 * support;
  }
  return score / n;
}

}  // namespace balm
