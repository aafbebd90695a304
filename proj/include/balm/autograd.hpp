#pragma once

// Minimal reverse-mode automatic differentiation over dense matrices.
//
// A BasicTensor is a shared handle to a node of a dynamically built graph.
// Every operation creates a new node that remembers its inputs and a closure
// pushing the node's gradient back into them. Nodes only reference earlier
// nodes, so the graph is acyclic by construction; backward() visits the nodes
// reachable from a scalar root in reverse topological order.
//
// Rank is at most two: vectors are 1 x n rows. The only broadcast is the
// row-wise bias addition of add_row_bias().

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "balm/errors.hpp"

namespace balm {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Matrix = MatrixX<double>;

namespace detail {

template <typename Scalar>
struct Node {
  MatrixX<Scalar> value;
  MatrixX<Scalar> grad;  // empty until the first backward pass reaches the node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> propagate;
  const char* op = "leaf";

  bool is_leaf() const { return inputs.empty(); }

  void accumulate(const MatrixX<Scalar>& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) grad = MatrixX<Scalar>::Zero(value.rows(), value.cols());
    grad += g;
  }
};

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

}  // namespace detail

template <typename Scalar>
class BasicTensor {
 public:
  using Matrix = MatrixX<Scalar>;
  using NodePtr = std::shared_ptr<detail::Node<Scalar>>;

  BasicTensor() = default;

  static BasicTensor constant(Matrix value) {
    auto node = std::make_shared<detail::Node<Scalar>>();
    node->value = std::move(value);
    return BasicTensor(std::move(node));
  }

  static BasicTensor parameter(Matrix value) {
    auto node = std::make_shared<detail::Node<Scalar>>();
    node->value = std::move(value);
    node->requires_grad = true;
    return BasicTensor(std::move(node));
  }

  static BasicTensor scalar(Scalar v) { return constant(Matrix::Constant(1, 1, v)); }

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  // Direct write access is reserved for optimizers; it bypasses the graph.
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf(); }
  const char* op() const { return node_->op; }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  Eigen::Index size() const { return node_->value.size(); }

  Scalar item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor " + detail::shape_str(rows(), cols()));
    return node_->value(0, 0);
  }

  void zero_grad() {
    if (node_->requires_grad) node_->grad = Matrix::Zero(rows(), cols());
  }

  // Fresh constant holding a copy of the current value.
  BasicTensor detach() const { return constant(node_->value); }

  // Independent leaf with the same value and requires_grad flag; no grad.
  BasicTensor clone() const { return requires_grad() ? parameter(node_->value) : constant(node_->value); }

  void backward() const;

  const NodePtr& node() const { return node_; }
  explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}

 private:
  NodePtr node_;
};

using Tensor = BasicTensor<double>;

namespace detail {

template <typename Scalar, typename Propagate>
BasicTensor<Scalar> make_result(MatrixX<Scalar> value, std::initializer_list<BasicTensor<Scalar>> inputs,
                                 Propagate&& propagate, const char* op) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  node->op = op;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->propagate = std::forward<Propagate>(propagate);
  }
  return BasicTensor<Scalar>(std::move(node));
}

template <typename Scalar>
void require_same_shape(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) + " vs " +
                         shape_str(b.rows(), b.cols()));
}

}  // namespace detail

template <typename Scalar>
void BasicTensor<Scalar>::backward() const {
  using detail::Node;
  if (size() != 1) throw ContractError("backward() requires a scalar root, got " + detail::shape_str(rows(), cols()));
  if (!requires_grad()) return;

  // Iterative post-order DFS: inputs are emitted before their consumers.
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node<Scalar>* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node<Scalar>* n : order) {
    if (!n->is_leaf()) n->grad = MatrixX<Scalar>::Zero(n->value.rows(), n->value.cols());
  }
  node_->accumulate(MatrixX<Scalar>::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* n = *it;
    if (!n->is_leaf()) {
      n->propagate(*n);
      // Interior gradients are scratch space; release them once consumed.
      n->grad.resize(0, 0);
    }
  }
}

// ---------------------------------------------------------------------------
// Elementary operations

template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions differ " + detail::shape_str(a.rows(), a.cols()) + " x " +
                         detail::shape_str(b.rows(), b.cols()));
  MatrixX<Scalar> out = a.value() * b.value();
  return detail::make_result<Scalar>(
      std::move(out), {a, b},
      [](detail::Node<Scalar>& n) {
        auto& x = *n.inputs[0];
        auto& y = *n.inputs[1];
        if (x.requires_grad) x.accumulate(n.grad * y.value.transpose());
        if (y.requires_grad) y.accumulate(x.value.transpose() * n.grad);
      },
      "matmul");
}

template <typename Scalar>
BasicTensor<Scalar> operator+(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  return detail::make_result<Scalar>(
      a.value() + b.value(), {a, b},
      [](detail::Node<Scalar>& n) {
        n.inputs[0]->accumulate(n.grad);
        n.inputs[1]->accumulate(n.grad);
      },
      "add");
}

template <typename Scalar>
BasicTensor<Scalar> operator-(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  return detail::make_result<Scalar>(
      a.value() - b.value(), {a, b},
      [](detail::Node<Scalar>& n) {
        n.inputs[0]->accumulate(n.grad);
        n.inputs[1]->accumulate(-n.grad);
      },
      "sub");
}

template <typename Scalar>
BasicTensor<Scalar> hadamard(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_shape(a, b, "hadamard");
  return detail::make_result<Scalar>(
      a.value().cwiseProduct(b.value()), {a, b},
      [](detail::Node<Scalar>& n) {
        auto& x = *n.inputs[0];
        auto& y = *n.inputs[1];
        if (x.requires_grad) x.accumulate(n.grad.cwiseProduct(y.value));
        if (y.requires_grad) y.accumulate(n.grad.cwiseProduct(x.value));
      },
      "hadamard");
}

template <typename Scalar>
BasicTensor<Scalar> scale(const BasicTensor<Scalar>& a, Scalar s) {
  return detail::make_result<Scalar>(
      a.value() * s, {a}, [s](detail::Node<Scalar>& n) { n.inputs[0]->accumulate(n.grad * s); }, "scale");
}

template <typename Scalar>
BasicTensor<Scalar> operator*(Scalar s, const BasicTensor<Scalar>& a) {
  return scale(a, s);
}

template <typename Scalar>
BasicTensor<Scalar> add_scalar(const BasicTensor<Scalar>& a, Scalar s) {
  return detail::make_result<Scalar>(
      (a.value().array() + s).matrix(), {a}, [](detail::Node<Scalar>& n) { n.inputs[0]->accumulate(n.grad); },
      "add_scalar");
}

// x[n x k] + bias[1 x k], the bias repeated on every row.
template <typename Scalar>
BasicTensor<Scalar> add_row_bias(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols())
    throw DimensionError("add_row_bias: bias " + detail::shape_str(bias.rows(), bias.cols()) + " for input " +
                         detail::shape_str(x.rows(), x.cols()));
  MatrixX<Scalar> out = x.value().rowwise() + bias.value().row(0);
  return detail::make_result<Scalar>(
      std::move(out), {x, bias},
      [](detail::Node<Scalar>& n) {
        n.inputs[0]->accumulate(n.grad);
        if (n.inputs[1]->requires_grad) n.inputs[1]->accumulate(n.grad.colwise().sum());
      },
      "add_row_bias");
}

// s[1 x 1] * x, the scalar itself being differentiable.
template <typename Scalar>
BasicTensor<Scalar> scale_by(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& s) {
  if (s.size() != 1) throw DimensionError("scale_by: factor must be 1x1, got " + detail::shape_str(s.rows(), s.cols()));
  const Scalar f = s.value()(0, 0);
  return detail::make_result<Scalar>(
      x.value() * f, {x, s},
      [f](detail::Node<Scalar>& n) {
        auto& in = *n.inputs[0];
        auto& fac = *n.inputs[1];
        if (in.requires_grad) in.accumulate(n.grad * f);
        if (fac.requires_grad) fac.accumulate(MatrixX<Scalar>::Constant(1, 1, n.grad.cwiseProduct(in.value).sum()));
      },
      "scale_by");
}

template <typename Scalar>
BasicTensor<Scalar> transpose(const BasicTensor<Scalar>& a) {
  return detail::make_result<Scalar>(
      a.value().transpose(), {a}, [](detail::Node<Scalar>& n) { n.inputs[0]->accumulate(n.grad.transpose()); },
      "transpose");
}

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& x) {
  return detail::make_result<Scalar>(
      x.value().cwiseMax(Scalar(0)), {x},
      [](detail::Node<Scalar>& n) {
        auto& in = *n.inputs[0];
        // Subgradient at exactly zero is zero.
        in.accumulate((in.value.array() > Scalar(0)).select(n.grad.array(), Scalar(0)).matrix());
      },
      "relu");
}

namespace detail {
template <typename Scalar>
Scalar stable_sigmoid(Scalar v) {
  // Clamped so the result stays strictly inside (0, 1) in floating point.
  constexpr Scalar lo = std::numeric_limits<Scalar>::min();
  const Scalar hi = std::nextafter(Scalar(1), Scalar(0));
  Scalar y;
  if (v >= Scalar(0)) {
    y = Scalar(1) / (Scalar(1) + std::exp(-v));
  } else {
    const Scalar e = std::exp(v);
    y = e / (Scalar(1) + e);
  }
  return std::clamp(y, lo, hi);
}
}  // namespace detail

template <typename Scalar>
BasicTensor<Scalar> sigmoid(const BasicTensor<Scalar>& x) {
  MatrixX<Scalar> y = x.value().unaryExpr([](Scalar v) { return detail::stable_sigmoid(v); });
  return detail::make_result<Scalar>(
      MatrixX<Scalar>(y), {x},
      [y](detail::Node<Scalar>& n) {
        n.inputs[0]->accumulate(n.grad.cwiseProduct(y.cwiseProduct((Scalar(1) - y.array()).matrix())));
      },
      "sigmoid");
}

template <typename Scalar>
BasicTensor<Scalar> abs(const BasicTensor<Scalar>& x) {
  return detail::make_result<Scalar>(
      x.value().cwiseAbs(), {x},
      [](detail::Node<Scalar>& n) {
        auto& in = *n.inputs[0];
        MatrixX<Scalar> sign = in.value.unaryExpr([](Scalar v) {
          return v > Scalar(0) ? Scalar(1) : (v < Scalar(0) ? Scalar(-1) : Scalar(0));
        });
        in.accumulate(n.grad.cwiseProduct(sign));
      },
      "abs");
}

template <typename Scalar>
BasicTensor<Scalar> sum(const BasicTensor<Scalar>& x) {
  return detail::make_result<Scalar>(
      MatrixX<Scalar>::Constant(1, 1, x.value().sum()), {x},
      [](detail::Node<Scalar>& n) {
        auto& in = *n.inputs[0];
        in.accumulate(MatrixX<Scalar>::Constant(in.value.rows(), in.value.cols(), n.grad(0, 0)));
      },
      "sum");
}

template <typename Scalar>
BasicTensor<Scalar> mean(const BasicTensor<Scalar>& x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.size()));
}

template <typename Scalar>
BasicTensor<Scalar> concat_cols(std::span<const BasicTensor<Scalar>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const Eigen::Index r = parts.front().rows();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw DimensionError("concat_cols: row counts differ");
    total += p.cols();
  }
  MatrixX<Scalar> out(r, total);
  std::vector<Eigen::Index> widths;
  Eigen::Index at = 0;
  bool any = false;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    widths.push_back(p.cols());
    at += p.cols();
    any = any || p.requires_grad();
  }
  auto node = std::make_shared<detail::Node<Scalar>>();
  node->value = std::move(out);
  node->op = "concat_cols";
  if (any) {
    node->requires_grad = true;
    for (const auto& p : parts) node->inputs.push_back(p.node());
    node->propagate = [widths](detail::Node<Scalar>& n) {
      Eigen::Index off = 0;
      for (std::size_t i = 0; i < widths.size(); ++i) {
        if (n.inputs[i]->requires_grad) n.inputs[i]->accumulate(n.grad.middleCols(off, widths[i]));
        off += widths[i];
      }
    };
  }
  return BasicTensor<Scalar>(std::move(node));
}

template <typename Scalar>
BasicTensor<Scalar> concat_cols(std::initializer_list<BasicTensor<Scalar>> parts) {
  std::vector<BasicTensor<Scalar>> v(parts);
  return concat_cols<Scalar>(std::span<const BasicTensor<Scalar>>(v));
}

// Columns [start, start + count) of x.
template <typename Scalar>
BasicTensor<Scalar> slice_cols(const BasicTensor<Scalar>& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) throw IndexError("slice_cols: range out of bounds");
  return detail::make_result<Scalar>(
      x.value().middleCols(start, count), {x},
      [start, count](detail::Node<Scalar>& n) {
        auto& in = *n.inputs[0];
        MatrixX<Scalar> g = MatrixX<Scalar>::Zero(in.value.rows(), in.value.cols());
        g.middleCols(start, count) = n.grad;
        in.accumulate(g);
      },
      "slice_cols");
}

// ---------------------------------------------------------------------------
// Probability operations

namespace detail {
template <typename Scalar>
MatrixX<Scalar> row_softmax(const MatrixX<Scalar>& logits) {
  MatrixX<Scalar> shifted = logits.colwise() - logits.rowwise().maxCoeff();
  MatrixX<Scalar> e = shifted.array().exp().matrix();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> norm = e.rowwise().sum();
  return (e.array().colwise() / norm.array()).matrix();
}
}  // namespace detail

template <typename Scalar>
BasicTensor<Scalar> softmax(const BasicTensor<Scalar>& logits) {
  MatrixX<Scalar> y = detail::row_softmax<Scalar>(logits.value());
  return detail::make_result<Scalar>(
      MatrixX<Scalar>(y), {logits},
      [y](detail::Node<Scalar>& n) {
        Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot = n.grad.cwiseProduct(y).rowwise().sum();
        MatrixX<Scalar> g = y.cwiseProduct((n.grad.colwise() - dot));
        n.inputs[0]->accumulate(g);
      },
      "softmax");
}

enum class Reduction { kMean, kSum };

template <typename Scalar>
struct CrossEntropyResult {
  BasicTensor<Scalar> loss;   // 1 x 1
  BasicTensor<Scalar> probs;  // n x C, differentiable w.r.t. the logits
};

// Softmax cross-entropy on integer labels. Optional per-row weights multiply
// each row's loss; the mean reduction still divides by the row count.
template <typename Scalar>
CrossEntropyResult<Scalar> softmax_cross_entropy(const BasicTensor<Scalar>& logits, std::span<const int> labels,
                                                 Reduction reduction = Reduction::kMean,
                                                 std::span<const Scalar> weights = {}) {
  const Eigen::Index n = logits.rows();
  const Eigen::Index classes = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n)
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  if (!weights.empty() && static_cast<Eigen::Index>(weights.size()) != n)
    throw DimensionError("softmax_cross_entropy: weight count differs from row count");
  for (int y : labels)
    if (y < 0 || y >= classes)
      throw IndexError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(classes) + ")");

  const MatrixX<Scalar>& z = logits.value();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_max = z.rowwise().maxCoeff();
  MatrixX<Scalar> p = detail::row_softmax<Scalar>(z);
  Scalar total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar lse = row_max(i) + std::log((z.row(i).array() - row_max(i)).exp().sum());
    const Scalar w = weights.empty() ? Scalar(1) : weights[i];
    total += w * (lse - z(i, labels[i]));
  }
  const Scalar denom = reduction == Reduction::kMean ? static_cast<Scalar>(n) : Scalar(1);

  std::vector<int> y(labels.begin(), labels.end());
  std::vector<Scalar> w(weights.begin(), weights.end());
  auto loss = detail::make_result<Scalar>(
      MatrixX<Scalar>::Constant(1, 1, total / denom), {logits},
      [p, y, w, denom](detail::Node<Scalar>& node) {
        MatrixX<Scalar> g = p;
        for (std::size_t i = 0; i < y.size(); ++i) g(static_cast<Eigen::Index>(i), y[i]) -= Scalar(1);
        if (!w.empty())
          for (std::size_t i = 0; i < w.size(); ++i) g.row(static_cast<Eigen::Index>(i)) *= w[i];
        node.inputs[0]->accumulate(g * (node.grad(0, 0) / denom));
      },
      "softmax_cross_entropy");
  return {loss, softmax(logits)};
}

inline constexpr double kProbabilityFloor = 1e-12;

// Sum over rows of KL(p_i || q_i). Entries of q are floored before the ratio;
// zero entries of p contribute nothing.
template <typename Scalar>
BasicTensor<Scalar> kl_divergence(const BasicTensor<Scalar>& p, const BasicTensor<Scalar>& q) {
  detail::require_same_shape(p, q, "kl_divergence");
  constexpr Scalar tol = Scalar(1e-9);
  for (const auto* m : {&p.value(), &q.value()}) {
    if ((m->array() < Scalar(0)).any()) throw DomainError("kl_divergence: negative probability");
    for (Eigen::Index i = 0; i < m->rows(); ++i)
      if (std::abs(m->row(i).sum() - Scalar(1)) > tol)
        throw DomainError("kl_divergence: row " + std::to_string(i) + " is not normalized");
  }
  const Scalar floor = Scalar(kProbabilityFloor);
  const MatrixX<Scalar>& pv = p.value();
  const MatrixX<Scalar> qf = q.value().cwiseMax(floor);
  Scalar total = 0;
  for (Eigen::Index k = 0; k < pv.size(); ++k)
    if (pv(k) > Scalar(0)) total += pv(k) * std::log(pv(k) / qf(k));

  return detail::make_result<Scalar>(
      MatrixX<Scalar>::Constant(1, 1, total), {p, q},
      [floor](detail::Node<Scalar>& n) {
        auto& pn = *n.inputs[0];
        auto& qn = *n.inputs[1];
        const Scalar g = n.grad(0, 0);
        const MatrixX<Scalar> qf = qn.value.cwiseMax(floor);
        if (pn.requires_grad) {
          MatrixX<Scalar> gp = MatrixX<Scalar>::Zero(pn.value.rows(), pn.value.cols());
          for (Eigen::Index k = 0; k < gp.size(); ++k)
            if (pn.value(k) > Scalar(0)) gp(k) = g * (std::log(pn.value(k) / qf(k)) + Scalar(1));
          pn.accumulate(gp);
        }
        if (qn.requires_grad) {
          MatrixX<Scalar> gq = MatrixX<Scalar>::Zero(qn.value.rows(), qn.value.cols());
          for (Eigen::Index k = 0; k < gq.size(); ++k)
            if (qn.value(k) >= floor) gq(k) = -g * pn.value(k) / qn.value(k);
          qn.accumulate(gq);
        }
      },
      "kl_divergence");
}

// Cosine similarity of the flattened operands. A zero-norm operand yields 0
// with no gradient; otherwise the norm product is floored at 1e-12.
template <typename Scalar>
BasicTensor<Scalar> cosine_similarity(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_shape(a, b, "cosine_similarity");
  const Scalar na = a.value().norm();
  const Scalar nb = b.value().norm();
  if (na == Scalar(0) || nb == Scalar(0)) return BasicTensor<Scalar>::scalar(Scalar(0));
  const Scalar raw = na * nb;
  const bool floored = raw < Scalar(kProbabilityFloor);
  const Scalar denom = floored ? Scalar(kProbabilityFloor) : raw;
  const Scalar dot = a.value().cwiseProduct(b.value()).sum();
  const Scalar c = dot / denom;
  return detail::make_result<Scalar>(
      MatrixX<Scalar>::Constant(1, 1, c), {a, b},
      [na, nb, denom, c, floored](detail::Node<Scalar>& n) {
        auto& x = *n.inputs[0];
        auto& y = *n.inputs[1];
        const Scalar g = n.grad(0, 0);
        if (x.requires_grad) {
          MatrixX<Scalar> gx = y.value / denom;
          if (!floored) gx -= x.value * (c / (na * na));
          x.accumulate(gx * g);
        }
        if (y.requires_grad) {
          MatrixX<Scalar> gy = x.value / denom;
          if (!floored) gy -= y.value * (c / (nb * nb));
          y.accumulate(gy * g);
        }
      },
      "cosine_similarity");
}

// ---------------------------------------------------------------------------
// Optimizer

// theta <- theta - lr * scale * grad for every tensor, then zero the grads.
template <typename Scalar>
void sgd_step(std::span<BasicTensor<Scalar>> params, Scalar lr, Scalar scale_factor) {
  if (!(lr > Scalar(0))) throw DomainError("sgd_step: learning rate must be positive");
  if (!(scale_factor >= Scalar(0))) throw DomainError("sgd_step: scale must be nonnegative");
  for (auto& t : params)
    if (!t.requires_grad() || !t.has_grad()) throw ContractError("sgd_step: parameter without populated gradient");
  const Scalar step = lr * scale_factor;
  for (auto& t : params) {
    t.mutable_value() -= step * t.grad();
    t.zero_grad();
  }
}

template <typename Scalar>
bool all_finite(const MatrixX<Scalar>& m) {
  return m.allFinite();
}

}  // namespace balm
