#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "balm/autograd.hpp"
#include "balm/errors.hpp"
#include "support/gradcheck.hpp"

using namespace balm;
using balm::testing::away_from_zero;
using balm::testing::check_gradients;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

Matrix random_probs(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Matrix p(rows, cols);
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = u(rng);
  for (Eigen::Index i = 0; i < rows; ++i) p.row(i) /= p.row(i).sum();
  return p;
}

}  // namespace

TEST_SUITE("autograd") {
  TEST_CASE("matmul hand cases") {
    const Matrix a = mat({{1, 2}, {3, 4}});
    CHECK(matmul(Tensor::constant(a), Tensor::constant(Matrix::Identity(2, 2))).value() == a);
    CHECK(matmul(Tensor::constant(mat({{1, 0}})), Tensor::constant(mat({{2}, {5}}))).item() == 2.0);
    CHECK_THROWS_AS(matmul(Tensor::constant(a), Tensor::constant(Matrix::Ones(3, 1))), DimensionError);
  }

  TEST_CASE("relu values and subgradient") {
    auto x = Tensor::parameter(mat({{-1, 0, 2}}));
    auto y = relu(x);
    CHECK(y.value() == mat({{0, 0, 2}}));
    sum(y).backward();
    CHECK(x.grad() == mat({{0, 0, 1}}));

    auto neg = Tensor::parameter(mat({{-3, -0.5}}));
    sum(relu(neg)).backward();
    CHECK(neg.grad().isZero(0.0));
  }

  TEST_CASE("sigmoid saturation stays inside the open interval") {
    CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
    const double hi = sigmoid(Tensor::scalar(50.0)).item();
    CHECK(hi < 1.0);
    CHECK(hi > 1.0 - 1e-15);
    const double lo = sigmoid(Tensor::scalar(-800.0)).item();
    CHECK(lo > 0.0);
    CHECK(std::isfinite(lo));
  }

  TEST_CASE("softmax cross-entropy hand cases") {
    const std::vector<int> labels{0, 1, 2};
    auto uniform = softmax_cross_entropy(Tensor::constant(Matrix::Zero(3, 4)), std::span<const int>(labels));
    CHECK(uniform.loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-15));

    Matrix dominant = Matrix::Zero(3, 4);
    for (int i = 0; i < 3; ++i) dominant(i, labels[static_cast<std::size_t>(i)]) = 50.0;
    CHECK(softmax_cross_entropy(Tensor::constant(dominant), std::span<const int>(labels)).loss.item() < 1e-10);

    const std::vector<int> bad{0, 4, 1};
    CHECK_THROWS_AS(softmax_cross_entropy(Tensor::constant(Matrix::Zero(3, 4)), std::span<const int>(bad)), IndexError);
  }

  TEST_CASE("softmax rows sum to one over the logit range") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-50.0, 50.0);
    for (int trial = 0; trial < 100; ++trial) {
      Matrix z(4, 6);
      for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = u(rng);
      const Matrix p = softmax(Tensor::constant(z)).value();
      for (Eigen::Index i = 0; i < p.rows(); ++i) CHECK(std::abs(p.row(i).sum() - 1.0) <= 1e-12);
    }
  }

  TEST_CASE("kl divergence hand cases and sign") {
    const Matrix p = mat({{0.2, 0.3, 0.5}});
    CHECK(kl_divergence(Tensor::constant(p), Tensor::constant(p)).item() == 0.0);
    CHECK(kl_divergence(Tensor::constant(mat({{1, 0}})), Tensor::constant(mat({{0.5, 0.5}}))).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-15));

    const Matrix a = mat({{0.1, 0.9}}), b = mat({{0.6, 0.4}}), c = mat({{0.3, 0.7}}), d = mat({{0.5, 0.5}});
    Matrix ac(2, 2), bd(2, 2);
    ac << a, c;
    bd << b, d;
    const double rows = kl_divergence(Tensor::constant(a), Tensor::constant(b)).item() +
                        kl_divergence(Tensor::constant(c), Tensor::constant(d)).item();
    CHECK(kl_divergence(Tensor::constant(ac), Tensor::constant(bd)).item() == doctest::Approx(rows).epsilon(1e-14));

    CHECK_THROWS_AS(kl_divergence(Tensor::constant(mat({{0.5, 0.6}})), Tensor::constant(d)), DomainError);

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial)
      CHECK(kl_divergence(Tensor::constant(random_probs(3, 5, rng)), Tensor::constant(random_probs(3, 5, rng))).item() >=
            -1e-12);
  }

  TEST_CASE("backward seeds and accumulates") {
    auto x = Tensor::parameter(mat({{1, -2, 3}, {4, 5, -6}}));
    sum(x).backward();
    CHECK(x.grad().isOnes(0.0));
    sum(x).backward();
    CHECK(x.grad() == Matrix::Constant(2, 3, 2.0));

    auto y = Tensor::parameter(mat({{1.5, -2.0}}));
    scale(sum(hadamard(y, y)), 0.5).backward();
    CHECK(y.grad() == y.value());

    CHECK_THROWS_AS(x.backward(), ContractError);
  }

  TEST_CASE("shared subexpressions sum their path contributions") {
    auto x = Tensor::parameter(mat({{0.5, -1.5}}));
    const Tensor s = sigmoid(x);
    sum(s + s + hadamard(s, x)).backward();
    const Matrix sv = s.value();
    const Matrix ds = sv.array() * (1.0 - sv.array());
    const Matrix expected = (2.0 * ds.array() + ds.array() * x.value().array() + sv.array()).matrix();
    CHECK((x.grad() - expected).cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("finite-difference agreement per op") {
    std::mt19937_64 rng(2024);
    const std::vector<int> labels{0, 2, 1, 1, 0};
    for (int trial = 0; trial < 5; ++trial) {
      auto a = Tensor::parameter(away_from_zero(3, 4, rng));
      auto b = Tensor::parameter(away_from_zero(4, 2, rng));
      auto c = Tensor::parameter(away_from_zero(3, 2, rng));
      auto bias = Tensor::parameter(away_from_zero(1, 2, rng));
      auto s = Tensor::parameter(away_from_zero(1, 1, rng));
      auto logits = Tensor::parameter(5.0 * away_from_zero(5, 3, rng));
      const Matrix w = away_from_zero(3, 2, rng);
      auto weighted = [&](const Tensor& t) { return sum(hadamard(t, Tensor::constant(w))); };

      CHECK(check_gradients([&] { return weighted(matmul(a, b)); }, {a, b}).max_relative_error <= 1e-5);
      CHECK(check_gradients([&] { return weighted(relu(c)); }, {c}).max_relative_error <= 1e-6);
      CHECK(check_gradients([&] { return weighted(sigmoid(c)); }, {c}).max_relative_error <= 1e-6);
      CHECK(check_gradients([&] { return weighted(abs(c)); }, {c}).max_relative_error <= 1e-5);
      CHECK(check_gradients([&] { return weighted(add_row_bias(c, bias)); }, {c, bias}).max_relative_error <= 1e-5);
      CHECK(check_gradients([&] { return weighted(scale_by(c, s)); }, {c, s}).max_relative_error <= 1e-5);
      CHECK(check_gradients([&] { return weighted(transpose(transpose(c)) - c + hadamard(c, c)); }, {c})
                .max_relative_error <= 1e-5);
      CHECK(check_gradients([&] { return weighted(softmax(c)); }, {c}).max_relative_error <= 1e-5);
      CHECK(check_gradients([&] { return softmax_cross_entropy(logits, std::span<const int>(labels)).loss; }, {logits})
                .max_relative_error <= 1e-5);
      CHECK(check_gradients([&] { return kl_divergence(softmax(c), softmax(scale(c, -0.5) + Tensor::constant(w))); }, {c})
                .max_relative_error <= 1e-5);
      auto other = Tensor::parameter(away_from_zero(3, 4, rng));
      CHECK(check_gradients([&] { return cosine_similarity(a, other); }, {a, other}).max_relative_error <= 1e-5);
      CHECK(check_gradients([&] { return mean(concat_cols({c, slice_cols(a, 1, 2)})); }, {c, a}).max_relative_error <=
            1e-5);
    }
  }

  TEST_CASE("cosine similarity edge cases") {
    const Tensor a = Tensor::constant(mat({{1, 2}, {3, 4}}));
    CHECK(cosine_similarity(a, a).item() == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cosine_similarity(a, Tensor::constant(Matrix::Zero(2, 2))).item() == 0.0);
    CHECK(cosine_similarity(Tensor::constant(mat({{1, 0}})), Tensor::constant(mat({{0, 3}}))).item() == 0.0);
  }

  TEST_CASE("sgd step arithmetic") {
    auto theta = Tensor::parameter(Matrix::Zero(1, 2));
    std::vector<Tensor> group{theta};
    sum(theta).backward();
    sgd_step<double>(group, 0.1, 1.0);
    CHECK(theta.value() == mat({{-0.1, -0.1}}));
    CHECK(theta.grad().isZero(0.0));

    sum(theta).backward();
    sgd_step<double>(group, 0.1, 0.0);
    CHECK(theta.value() == mat({{-0.1, -0.1}}));

    // Two steps at scale mu equal one step at 2 mu for a constant gradient.
    auto twice = Tensor::parameter(Matrix::Zero(1, 2));
    auto once = Tensor::parameter(Matrix::Zero(1, 2));
    std::vector<Tensor> g2{twice}, g1{once};
    for (int k = 0; k < 2; ++k) {
      sum(twice).backward();
      sgd_step<double>(g2, 0.05, 0.7);
    }
    sum(once).backward();
    sgd_step<double>(g1, 0.1, 0.7);
    CHECK((twice.value() - once.value()).cwiseAbs().maxCoeff() < 1e-15);

    CHECK_THROWS_AS(sgd_step<double>(g1, 0.0, 1.0), DomainError);
    auto fresh = Tensor::parameter(Matrix::Zero(1, 1));
    std::vector<Tensor> g3{fresh};
    CHECK_THROWS_AS(sgd_step<double>(g3, 0.1, 1.0), ContractError);
  }

  TEST_CASE("float scalar instantiation") {
    using T = BasicTensor<float>;
    auto x = T::parameter(MatrixX<float>::Constant(2, 2, 1.5f));
    sum(hadamard(x, x)).backward();
    CHECK(x.grad()(0, 0) == doctest::Approx(3.0f));
  }
}
