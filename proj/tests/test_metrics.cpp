#include <doctest.h>

#include <algorithm>
#include <random>

#include "balm/errors.hpp"
#include "balm/metrics.hpp"

using namespace balm;

TEST_SUITE("metrics") {
  TEST_CASE("accuracy hand cases") {
    const std::vector<int> a{0, 1, 1, 0}, b{0, 1, 0, 0}, c{1, 0, 0, 1};
    CHECK(accuracy(a, a) == 1.0);
    CHECK(accuracy(c, a) == 0.0);
    CHECK(accuracy(b, a) == 0.75);
    CHECK_THROWS_AS(accuracy(std::vector<int>{}, std::vector<int>{}), DomainError);
    CHECK_THROWS_AS(accuracy(a, std::vector<int>{0}), DimensionError);
  }

  TEST_CASE("weighted f1 hand cases") {
    const std::vector<int> truth{0, 0, 1}, pred{0, 1, 1};
    CHECK(weighted_f1(pred, truth, 2) == 2.0 / 3.0);
    CHECK(weighted_f1(truth, truth, 2) == 1.0);
    const std::vector<int> single{2, 2, 2};
    CHECK(weighted_f1(single, single, 3) == 1.0);
    // Constant prediction on balanced two-class data.
    const std::vector<int> bal{0, 1, 0, 1}, zeros{0, 0, 0, 0};
    CHECK(accuracy(zeros, bal) == 0.5);
    CHECK(weighted_f1(zeros, bal, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK_THROWS_AS(weighted_f1(std::vector<int>{3}, std::vector<int>{0}, 2), IndexError);
  }

  TEST_CASE("confusion matrix") {
    const std::vector<int> truth{0, 0, 1, 2}, pred{0, 1, 1, 0};
    const auto cm = ConfusionMatrix::build(pred, truth, 3);
    CHECK(cm.total() == 4);
    CHECK(cm.counts(0, 1) == 1);
    CHECK(cm.counts(2, 0) == 1);
    CHECK((cm.counts.array() >= 0).all());
  }

  TEST_CASE("metric properties on random labels") {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> cls(0, 3);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<int> t(25), p(25);
      for (auto* v : {&t, &p})
        for (int& x : *v) x = cls(rng);
      const double f = weighted_f1(p, t, 4);
      CHECK(f >= 0.0);
      CHECK(f <= 1.0);
      if (p != t) CHECK(f < 1.0);

      std::vector<std::size_t> idx(t.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::shuffle(idx.begin(), idx.end(), rng);
      std::vector<int> ts, ps;
      for (auto i : idx) {
        ts.push_back(t[i]);
        ps.push_back(p[i]);
      }
      CHECK(accuracy(ps, ts) == accuracy(p, t));
      CHECK(weighted_f1(ps, ts, 4) == doctest::Approx(f).epsilon(1e-15));
    }
  }
}
