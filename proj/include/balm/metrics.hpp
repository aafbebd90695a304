#pragma once

#include <span>

#include <Eigen/Core>

namespace balm {

// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  Eigen::MatrixXi counts;

  static ConfusionMatrix build(std::span<const int> predicted, std::span<const int> truth, int classes);
  int classes() const { return static_cast<int>(counts.rows()); }
  long total() const { return counts.cast<long>().sum(); }
};

double accuracy(std::span<const int> predicted, std::span<const int> truth);

// Support-weighted mean of per-class F1; an F1 with zero precision and recall is 0.
double weighted_f1(std::span<const int> predicted, std::span<const int> truth, int classes);

}  // namespace balm
