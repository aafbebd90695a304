#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "balm/errors.hpp"
#include "balm/metrics.hpp"
#include "balm/trainer.hpp"
#include "support/oracles.hpp"

using namespace balm;
using namespace balm::testing;

namespace {

DatasetSplits small_splits(std::uint64_t seed = 0) {
  DatasetSpec spec;
  spec.n_train = 64;
  spec.n_val = 32;
  spec.n_test = 32;
  spec.dims = {6, 5, 4};
  spec.seed = seed;
  return generate_synthetic(spec);
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.model.d_emb = 8;
  cfg.model.d_h = 8;
  cfg.model.hidden = 12;
  return cfg;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("disabled plug-ins reduce to plain backbone SGD") {
    const auto s = small_splits();
    const auto masks = generate_masks(MissingRateVector({0.3, 0.5, 0.7}), s.train.size(), 3);
    TrainConfig cfg = small_config();
    cfg.grm.tau = 0.0;
    cfg.ablations = {false, false, false};
    Trainer trainer(cfg, s.train, masks);
    Model reference = trainer.model().clone();
    const auto batches = batch_iter(s.train, masks, cfg.batch_size, 11, true);
    for (int step = 0; step < 20; ++step) {
      const auto& b = batches[static_cast<std::size_t>(step) % batches.size()];
      trainer.step(b);
      plain_backbone_step(reference, b, cfg.lr, cfg.model.reduction);
      CHECK(backbone_distance(trainer.model(), reference) <= 1e-12);
    }
  }

  TEST_CASE("coefficients follow the modulation identity after every step") {
    const auto s = small_splits();
    const auto masks = generate_masks(MissingRateVector({0.3, 0.5, 0.7}), s.train.size(), 3);
    const TrainConfig cfg = small_config();
    Trainer trainer(cfg, s.train, masks);
    CHECK(trainer.modulation().mu == std::vector<double>{1.0, 1.0, 1.0});
    for (const auto& b : batch_iter(s.train, masks, cfg.batch_size, 1, true)) {
      const auto st = trainer.step(b);
      CHECK(std::abs(std::accumulate(st.mu.begin(), st.mu.end(), 0.0) - cfg.grm.rho * 2.0) <= 1e-12);
      for (double d : st.d_kl) CHECK(d >= 0.0);
      CHECK(st.l_mod >= 0.0);
    }
    CHECK(trainer.iteration() == 4);
  }

  TEST_CASE("lagged mode carries the previous alignment value") {
    const auto s = small_splits();
    const auto masks = generate_masks(MissingRateVector({0.3, 0.5, 0.7}), s.train.size(), 3);
    TrainConfig cfg = small_config();
    cfg.grm.mod_loss_mode = ModLossMode::kLagged;
    Trainer trainer(cfg, s.train, masks);
    const auto batches = batch_iter(s.train, masks, cfg.batch_size, 1, true);
    CHECK(trainer.step(batches[0]).l_mod == 0.0);
    const double carried = trainer.modulation().carried_mod_loss;
    CHECK(carried > 0.0);
    CHECK(trainer.step(batches[1]).l_mod == carried);
  }

  TEST_CASE("live unimodal branches change the encoder update") {
    const auto s = small_splits();
    const auto masks = generate_masks(MissingRateVector({0.3, 0.5, 0.7}), s.train.size(), 3);
    TrainConfig live = small_config();
    live.grm.detach_unimodal = false;
    Trainer a(small_config(), s.train, masks), b(live, s.train, masks);
    const auto batch = batch_iter(s.train, masks, 16, 1, false)[0];
    a.step(batch);
    b.step(batch);
    CHECK(backbone_distance(a.model(), b.model()) > 0.0);
  }

  TEST_CASE("non-finite loss aborts with the batch ids") {
    const auto s = small_splits();
    const auto masks = MaskSet::all_present(3, s.train.size());
    Trainer trainer(small_config(), s.train, masks);
    trainer.model().backbone.head.weight.mutable_value()(0, 0) = std::numeric_limits<double>::quiet_NaN();
    const auto batch = batch_iter(s.train, masks, 16, 0, false)[0];
    try {
      trainer.step(batch);
      FAIL("expected a numeric error");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("train-0") != std::string::npos);
      CHECK(std::string(e.what()).find("iteration 0") != std::string::npos);
    }
  }

  TEST_CASE("parameter groups are disjoint") {
    const auto s = small_splits();
    const Model model = Model::init(s.train.dims(), s.train.classes, small_config());
    auto groups = model.groups();
    audit_parameter_groups(groups);
    groups.push_back(model.backbone.head_group());
    CHECK_THROWS_AS(audit_parameter_groups(groups), ContractError);
  }

  TEST_CASE("evaluation matches the metrics module") {
    const auto s = small_splits();
    const auto masks = generate_masks(MissingRateVector({0.3, 0.5, 0.7}), s.val.size(), 2);
    TrainConfig cfg = small_config();
    cfg.ablations.fcm_on = false;
    const Model model = Model::init(s.train.dims(), s.train.classes, cfg);
    const auto r = evaluate(model, cfg, s.val, masks);
    const auto full = full_batch(s.val, masks);
    const auto out = forward(uncalibrated(full), model.backbone);
    const auto pred = argmax_rows(out.prediction.probs.value());
    CHECK(r.accuracy == accuracy(pred, s.val.labels));
    CHECK(r.weighted_f1 == weighted_f1(pred, s.val.labels, s.val.classes));
    CHECK(r.loss == doctest::Approx(task_loss(out.prediction, s.val.labels).item()).epsilon(1e-12));
  }

  TEST_CASE("training is deterministic and records every epoch") {
    const auto s = small_splits();
    const TrainConfig cfg = small_config();
    const auto masks = SplitMasks::generate(MissingRateVector(cfg.rates), s, 5);
    const auto a = train(cfg, s, masks);
    const auto b = train(cfg, s, masks);
    CHECK(a.record.epochs.size() == 3);
    CHECK(a.record.diagnostics.size() == 3);
    CHECK(a.record.best_epoch >= 1);
    CHECK(a.record.test.accuracy == b.record.test.accuracy);
    for (std::size_t e = 0; e < 3; ++e) {
      CHECK(a.record.epochs[e].train_loss == b.record.epochs[e].train_loss);
      CHECK(a.record.diagnostics[e].cos == b.record.diagnostics[e].cos);
    }
    double best = -1.0;
    for (const auto& e : a.record.epochs) best = std::max(best, e.val.weighted_f1);
    CHECK(a.record.epochs[static_cast<std::size_t>(a.record.best_epoch - 1)].val.weighted_f1 == best);
    for (int e = 1; e < a.record.best_epoch; ++e) CHECK(a.record.epochs[static_cast<std::size_t>(e - 1)].val.weighted_f1 < best);
  }

  TEST_CASE("frozen descriptors and attention fusion train") {
    const auto s = small_splits();
    TrainConfig cfg = small_config();
    cfg.fcm.scope = DescriptorScope::kFrozen;
    cfg.model.variant = FusionVariant::kAttention;
    const auto masks = SplitMasks::generate(MissingRateVector(cfg.rates), s, 1);
    const auto r = train(cfg, s, masks);
    CHECK(r.best_model.frozen_descriptors.size() == 3);
    CHECK(std::isfinite(r.record.test.loss));
  }

  TEST_CASE("moving average") {
    const std::vector<double> v{1.0, 1.0, 4.0};
    const auto e = ema(v, 3);
    CHECK(e[0] == 1.0);
    CHECK(e[1] == 1.0);
    CHECK(e[2] == doctest::Approx(2.5));
  }

  TEST_CASE("config validation") {
    TrainConfig cfg;
    cfg.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), DomainError);
    cfg = TrainConfig{};
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), DomainError);
    cfg = TrainConfig{};
    cfg.rates = {0.2, 1.2};
    CHECK_THROWS_AS(cfg.validate(), DomainError);
  }
}
