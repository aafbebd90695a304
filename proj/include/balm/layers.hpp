#pragma once

#include <string>
#include <utility>
#include <vector>

#include "balm/autograd.hpp"
#include "balm/random.hpp"

namespace balm {

// Affine map y = x W + b with W stored (in x out).
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear uniform(Eigen::Index in, Eigen::Index out, Rng& rng) {
    return {Tensor::parameter(uniform_init(in, out, in, rng)), Tensor::parameter(uniform_init(1, out, in, rng))};
  }
  static Linear zeros(Eigen::Index in, Eigen::Index out) {
    return {Tensor::parameter(Matrix::Zero(in, out)), Tensor::parameter(Matrix::Zero(1, out))};
  }

  Tensor operator()(const Tensor& x) const { return add_row_bias(matmul(x, weight), bias); }

  Eigen::Index in_dim() const { return weight.rows(); }
  Eigen::Index out_dim() const { return weight.cols(); }
};

using NamedTensor = std::pair<std::string, Tensor>;

// A named set of parameters updated together with one step size.
struct ParameterGroup {
  std::string name;
  std::vector<NamedTensor> params;

  void add(const std::string& key, const Tensor& t) { params.emplace_back(key, t); }
  void add(const std::string& key, const Linear& l) {
    add(key + ".weight", l.weight);
    add(key + ".bias", l.bias);
  }
  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& [_, t] : params) out.push_back(t);
    return out;
  }
  void zero_grad() {
    for (auto& [_, t] : params) t.zero_grad();
  }
  // Squared L2 norm of the concatenated gradients; missing grads count as zero.
  double grad_squared_norm() const {
    double s = 0.0;
    for (const auto& [_, t] : params)
      if (t.has_grad()) s += t.grad().squaredNorm();
    return s;
  }
};

inline void sgd_step(ParameterGroup& group, double lr, double scale_factor) {
  auto ts = group.tensors();
  sgd_step<double>(std::span<Tensor>(ts), lr, scale_factor);
}

inline Tensor ones(Eigen::Index rows, Eigen::Index cols) { return Tensor::constant(Matrix::Ones(rows, cols)); }

}  // namespace balm
