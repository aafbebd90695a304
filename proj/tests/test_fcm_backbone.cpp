#include <doctest.h>

#include <random>

#include "balm/backbone.hpp"
#include "balm/errors.hpp"
#include "balm/fcm.hpp"
#include "support/gradcheck.hpp"
#include "support/models.hpp"

using namespace balm;
using namespace balm::testing;

namespace {

MultimodalBatch two_row_batch(const Matrix& a, const Matrix& b, std::vector<MaskPattern> masks) {
  MultimodalBatch batch;
  batch.features = {a, b};
  batch.masks = std::move(masks);
  batch.labels = std::vector<int>(static_cast<std::size_t>(a.rows()), 0);
  for (Eigen::Index i = 0; i < a.rows(); ++i) batch.ids.push_back(std::to_string(i));
  return batch;
}

}  // namespace

TEST_SUITE("fcm") {
  TEST_CASE("global descriptor hand cases") {
    Matrix a(2, 2);
    a << 1, 2, 3, 4;
    Matrix b = Matrix::Zero(2, 1);
    const auto full = two_row_batch(a, b, {MaskPattern(1, 2), MaskPattern(1, 2)});
    const Matrix d = global_descriptor(full, 0, 1e-8);
    CHECK(std::abs(d(0, 0) - 2.0) < 1e-7);
    CHECK(std::abs(d(0, 1) - 3.0) < 1e-7);
    CHECK(global_descriptor(full, 1, 1e-8).isZero(0.0));

    Matrix c(2, 2);
    c << 2, 4, 0, 0;
    const auto half = two_row_batch(c, b, {MaskPattern(1, 2), MaskPattern(2, 2)});
    const Matrix h = global_descriptor(half, 0, 1e-8);
    CHECK(std::abs(h(0, 0) - 2.0) < 1e-7);
    CHECK(std::abs(h(0, 1) - 4.0) < 1e-7);
  }

  TEST_CASE("context is nonnegative and checks width") {
    std::mt19937_64 rng(3);
    Rng init(4);
    const std::vector<int> dims{3, 2};
    const auto params = FcmParams::init(dims, 4, init);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor ctx = cross_modal_context(Tensor::constant(away_from_zero(1, 5, rng)), params);
      CHECK((ctx.value().array() >= 0.0).all());
    }
    FcmParams zero{Linear::zeros(5, 4), {Linear::zeros(4, 3), Linear::zeros(4, 2)}};
    CHECK(cross_modal_context(Tensor::constant(Matrix::Zero(1, 5)), zero).value().isZero(0.0));
    CHECK_THROWS_AS(cross_modal_context(Tensor::constant(Matrix::Zero(1, 4)), params), DimensionError);

    auto desc = Tensor::parameter(away_from_zero(1, 5, rng));
    CHECK(check_gradients([&] { return sum(cross_modal_context(desc, params)); }, {desc}).max_relative_error <= 1e-5);
  }

  TEST_CASE("zero-initialized calibration scales by exactly 1.5") {
    std::mt19937_64 rng(8);
    const std::vector<int> dims{3, 4, 2};
    const auto batch = random_batch(dims, 3, 7, rng);
    Rng init(1);
    const auto params = FcmParams::init(dims, 3, init);
    const auto cal = calibrate(batch, params, FcmConfig{});
    for (std::size_t m = 0; m < dims.size(); ++m) {
      CHECK(cal.gates[m].value().isConstant(1.5, 0.0));
      CHECK(cal.features[m].value() == (1.5 * batch.features[m]).eval());
    }
  }

  TEST_CASE("calibration preserves shapes, zero rows and the gate range") {
    std::mt19937_64 rng(12);
    const std::vector<int> dims{3, 4, 2};
    Rng init(2);
    auto params = FcmParams::init(dims, 3, init);
    for (auto& c : params.cal) {
      randomize(c.weight, rng, 3.0);
      randomize(c.bias, rng, 3.0);
    }
    for (int trial = 0; trial < 10; ++trial) {
      const auto batch = random_batch(dims, 3, 9, rng);
      const auto cal = calibrate(batch, params, FcmConfig{});
      for (std::size_t m = 0; m < dims.size(); ++m) {
        const Matrix& x = batch.features[m];
        const Matrix& y = cal.features[m].value();
        CHECK(y.rows() == x.rows());
        CHECK(y.cols() == x.cols());
        CHECK((cal.gates[m].value().array() > 1.0).all());
        CHECK((cal.gates[m].value().array() < 2.0).all());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
          if (!batch.masks[static_cast<std::size_t>(i)].present(static_cast<int>(m))) CHECK(y.row(i).isZero(0.0));
          for (Eigen::Index j = 0; j < x.cols(); ++j)
            if (x(i, j) != 0.0) {
              CHECK(std::abs(y(i, j)) > std::abs(x(i, j)));
              CHECK(std::abs(y(i, j)) < 2.0 * std::abs(x(i, j)));
            }
        }
      }
    }
  }

  TEST_CASE("frozen descriptors replace the batch average") {
    std::mt19937_64 rng(21);
    const std::vector<int> dims{3, 2};
    const auto batch = random_batch(dims, 2, 5, rng);
    Rng init(3);
    auto params = FcmParams::init(dims, 3, init);
    for (auto& c : params.cal) randomize(c.weight, rng, 2.0);
    FcmConfig frozen;
    frozen.scope = DescriptorScope::kFrozen;
    CHECK_THROWS_AS(calibrate(batch, params, frozen), ContractError);
    const std::vector<Matrix> stored{global_descriptor(batch, 0, 1e-8), global_descriptor(batch, 1, 1e-8)};
    const auto a = calibrate(batch, params, frozen, &stored);
    const auto b = calibrate(batch, params, FcmConfig{});
    CHECK(a.features[0].value() == b.features[0].value());
    CHECK(parse_descriptor_scope("frozen") == DescriptorScope::kFrozen);
    CHECK_THROWS_AS(parse_descriptor_scope("epoch"), DomainError);
  }

  TEST_CASE("end-to-end FCM gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      auto p = end_to_end_problem(Pipeline::kFcmConcat, seed);
      const auto r = check_gradients(p.loss, p.params);
      INFO("analytic ", r.worst_analytic, " numeric ", r.worst_numeric);
      CHECK(r.max_relative_error <= 1e-5);
    }
  }
}

TEST_SUITE("backbone") {
  TEST_CASE("encoders see only their input") {
    BackboneConfig cfg;
    Rng rng(5);
    const std::vector<int> dims{3, 2};
    const auto params = BackboneParams::init(dims, 4, cfg, rng);
    Matrix x = Matrix::Zero(2, 3);
    const auto z = params.encoders[0](Tensor::constant(x)).value();
    CHECK(z.row(0) == z.row(1));
    CHECK(params.head.weight.rows() == cfg.d_h);
    CHECK(params.head.weight.cols() == 4);

    Encoder zero{Linear::zeros(3, 5), Linear::zeros(5, 2)};
    zero.second.bias.mutable_value() << 0.25, -1.0;
    const auto zz = zero(Tensor::constant(Matrix::Ones(3, 3))).value();
    for (Eigen::Index i = 0; i < 3; ++i) CHECK(zz.row(i) == zero.second.bias.value());
  }

  TEST_CASE("attention with equal scores averages the projections") {
    BackboneConfig cfg;
    cfg.variant = FusionVariant::kAttention;
    Rng rng(6);
    const std::vector<int> dims{3, 2, 4};
    const auto params = BackboneParams::init(dims, 3, cfg, rng);
    std::mt19937_64 g(1);
    std::vector<Tensor> z;
    for (int m = 0; m < 3; ++m) z.push_back(Tensor::constant(away_from_zero(4, cfg.d_emb, g)));
    Matrix expected = Matrix::Zero(4, cfg.d_h);
    for (int m = 0; m < 3; ++m) expected += params.projection[static_cast<std::size_t>(m)](z[static_cast<std::size_t>(m)]).value();
    expected /= 3.0;
    CHECK((fuse(z, params).value() - expected).cwiseAbs().maxCoeff() < 1e-14);
  }

  TEST_CASE("concat fusion with zero weights gives zero") {
    BackboneConfig cfg;
    Rng rng(7);
    const std::vector<int> dims{3, 2};
    auto params = BackboneParams::init(dims, 3, cfg, rng);
    params.fusion = Linear::zeros(2 * cfg.d_emb, cfg.d_h);
    std::vector<Tensor> z{Tensor::constant(Matrix::Ones(2, cfg.d_emb)), Tensor::constant(Matrix::Ones(2, cfg.d_emb))};
    CHECK(fuse(z, params).value().isZero(0.0));
  }

  TEST_CASE("prediction and task loss") {
    const Linear head = Linear::zeros(4, 6);
    const auto pred = predict(Tensor::constant(Matrix::Ones(3, 4)), head);
    CHECK(pred.probs.value().isConstant(1.0 / 6.0, 1e-15));
    const std::vector<int> labels{0, 5, 2};
    CHECK(task_loss(pred, labels).item() == doctest::Approx(std::log(6.0)).epsilon(1e-15));
    CHECK(task_loss(pred, labels, Reduction::kSum).item() == doctest::Approx(3.0 * std::log(6.0)).epsilon(1e-15));

    std::mt19937_64 rng(4);
    Matrix logits = away_from_zero(5, 4, rng);
    CHECK(argmax_rows(logits) == argmax_rows((logits.array() + 7.5).matrix()));
    const auto p = predict(Tensor::constant(logits), Linear{Tensor::constant(Matrix::Identity(4, 4)),
                                                             Tensor::constant(Matrix::Zero(1, 4))});
    for (Eigen::Index i = 0; i < 5; ++i) CHECK(std::abs(p.probs.value().row(i).sum() - 1.0) <= 1e-12);
    const std::vector<int> l5{0, 1, 2, 3, 0};
    CHECK(task_loss(p, l5).item() == softmax_cross_entropy(Tensor::constant(logits), std::span<const int>(l5)).loss.item());

    Matrix ties(1, 3);
    ties << 0.2, 0.4, 0.4;
    CHECK(argmax_rows(ties) == std::vector<int>{1});
  }

  TEST_CASE("both fusion variants pass end-to-end gradient checks") {
    for (std::uint64_t seed = 10; seed < 13; ++seed) {
      auto a = end_to_end_problem(Pipeline::kFcmConcat, seed);
      CHECK(check_gradients(a.loss, a.params).max_relative_error <= 1e-5);
      auto b = end_to_end_problem(Pipeline::kFcmAttention, seed);
      CHECK(check_gradients(b.loss, b.params).max_relative_error <= 1e-5);
    }
  }

  TEST_CASE("parsers") {
    CHECK(parse_fusion_variant("attention") == FusionVariant::kAttention);
    CHECK(parse_reduction("sum") == Reduction::kSum);
    CHECK_THROWS_AS(parse_fusion_variant("gcn"), DomainError);
  }
}
