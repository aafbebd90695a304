#pragma once

// Central finite-difference oracle for scalar-valued graphs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "balm/autograd.hpp"

namespace balm::testing {

struct GradCheck {
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
  double worst_analytic = 0.0;  // entry with the largest relative error
  double worst_numeric = 0.0;
};

// Relative error |a - n| / max(|a|, |n|, floor) over every entry of every
// parameter; `loss` must rebuild the graph from the current parameter values.
// Central differences at h = 1e-5 carry roundoff near 1e-11 * |loss|, so
// entries below the floor are judged on absolute error instead.
inline GradCheck check_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> params, double h = 1e-5,
                                 double floor = 1e-4) {
  for (auto& p : params) p.zero_grad();
  loss().backward();
  std::vector<Matrix> analytic;
  for (const auto& p : params) analytic.push_back(p.has_grad() ? p.grad() : Matrix::Zero(p.rows(), p.cols()));

  GradCheck out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& v = params[k].mutable_value();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double orig = v(i);
      v(i) = orig + h;
      const double up = loss().item();
      v(i) = orig - h;
      const double down = loss().item();
      v(i) = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k](i);
      const double err = std::abs(a - numeric);
      out.max_abs_error = std::max(out.max_abs_error, err);
      const double rel = err / std::max({std::abs(a), std::abs(numeric), floor});
      if (rel > out.max_relative_error) {
        out.max_relative_error = rel;
        out.worst_analytic = a;
        out.worst_numeric = numeric;
      }
    }
  }
  return out;
}

// Random matrix with entries in [-1, 1] kept at least `margin` away from 0,
// so kinked ops (relu, abs) are differentiable at every probe point.
inline Matrix away_from_zero(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double margin = 0.05) {
  std::uniform_real_distribution<double> mag(margin, 1.0);
  std::bernoulli_distribution sign(0.5);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = sign(rng) ? mag(rng) : -mag(rng);
  return m;
}

}  // namespace balm::testing
