// balm: mask statistics, training runs, evaluation and diagnostics.
//
// Exit codes: 0 success, 2 usage / config / I/O error, 3 numeric failure.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "balm/config.hpp"
#include "balm/errors.hpp"
#include "balm/grm.hpp"
#include "balm/masking.hpp"
#include "balm/run.hpp"

namespace {

constexpr int kUsage = 2;
constexpr int kNumeric = 3;

void mask_stats(const std::vector<double>& rate_values, double shared, const std::string& measure, std::size_t n,
                std::uint64_t seed) {
  const balm::MissingRateVector rates(rate_values);
  const int M = rates.modalities();
  const auto smr = balm::smr_distribution(shared, M);
  const auto imr = balm::imr_distribution(rates);

  std::printf("pattern,p_smr,p_imr\n");
  for (std::uint32_t bits = (1u << M) - 1; bits >= 1; --bits) {
    const balm::MaskPattern e(bits, M);
    std::printf("%s,%.6f,%.6f\n", e.label().c_str(), smr(e), imr(e));
  }

  const auto div = balm::parse_divergence(measure);
  std::printf("\nmeasure,shared,delta_imr\n%s,%.6f,%.6f\n", measure.c_str(), shared, balm::delta_imr(rates, shared, div));

  const auto masks = balm::generate_masks(rates, n, seed);
  std::printf("\nmodality,rate,realized,error\n");
  double max_error = 0.0;
  for (int m = 0; m < M; ++m) {
    const double err = std::abs(masks.realized_ratios[static_cast<std::size_t>(m)] - rates[m]);
    max_error = std::max(max_error, err);
    std::printf("%d,%.6f,%.6f,%.6f\n", m, rates[m], masks.realized_ratios[static_cast<std::size_t>(m)], err);
  }
  const double bound = balm::mask_error_bound(rates);
  const double slack = std::ldexp(1.0, M) / static_cast<double>(n);
  std::printf("\nn,max_error,bound,slack,within_bound_plus_slack\n%zu,%.6f,%.6f,%.6f,%d\n", n, max_error, bound, slack,
              max_error <= bound + slack ? 1 : 0);
}

void verify_lemma1(const std::vector<double>& rs, std::size_t draws, std::uint64_t seed, int modality, int replicas) {
  const auto problem = balm::Lemma1Problem::synthetic(seed);
  balm::Lemma1Options opts;
  opts.draws = draws;
  opts.seed = seed;
  opts.modality = modality;
  opts.replicas = replicas;
  std::printf("r,expected,ratio,relative_error\n");
  for (double r : rs) {
    const double ratio = balm::verify_lemma1(problem, r, opts);
    const double expected = 1.0 - r;
    std::printf("%.6f,%.6f,%.6f,%.6f\n", r, expected, ratio, std::abs(ratio - expected) / expected);
  }
}

int train(const std::string& path, bool parallel) {
  const auto config = balm::load_config(path);
  for (const auto& outcome : balm::run_experiment(config, parallel)) {
    const auto& rec = outcome.result.record;
    std::printf("%s best_epoch=%d test_accuracy=%.6f test_weighted_f1=%.6f\n", outcome.dir.string().c_str(),
                rec.best_epoch, rec.test.accuracy, rec.test.weighted_f1);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal classifier training with per-modality missing rates"};
  app.require_subcommand(1);

  auto* stats = app.add_subcommand("mask-stats", "Pattern distributions, divergence and generated-mask ratios as CSV");
  std::vector<double> rates;
  double shared = -1.0;
  std::string measure = "kl";
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  stats->add_option("--rates", rates, "Per-modality missing rates in [0, 1)")->required()->expected(2, balm::kMaxModalities);
  stats->add_option("--shared", shared, "Shared reference rate (default: mean of --rates)");
  stats->add_option("--measure", measure, "Divergence")->check(CLI::IsMember({"kl", "js"}));
  stats->add_option("--n", n, "Samples for mask generation")->check(CLI::PositiveNumber);
  stats->add_option("--seed", seed, "Shuffle seed");

  auto* tr = app.add_subcommand("train", "Train every seed of a config; writes one run directory per seed");
  std::string config_path;
  bool parallel = false;
  tr->add_option("--config", config_path, "Experiment config (JSON)")->required();
  tr->add_flag("--parallel", parallel, "Run seeds concurrently");

  auto* ev = app.add_subcommand("eval", "Recompute metrics from a run directory");
  std::string run_dir;
  std::string split = "test";
  ev->add_option("--run", run_dir, "Run directory")->required();
  ev->add_option("--split", split, "Split")->check(CLI::IsMember({"train", "val", "test"}));

  auto* lemma = app.add_subcommand("verify-lemma1", "Monte-Carlo gradient scaling ratio versus 1 - r");
  std::vector<double> lemma_rates{0.2, 0.5, 0.8};
  std::size_t draws = 20000;
  int modality = 0;
  int replicas = 4;
  lemma->add_option("--r", lemma_rates, "Missing rates");
  lemma->add_option("--draws", draws, "Mask draws per rate")->check(CLI::Range(std::size_t{1000}, std::size_t{100000000}));
  lemma->add_option("--seed", seed, "Seed");
  lemma->add_option("--modality", modality, "Encoder whose gradient is measured")->check(CLI::Range(0, 2));
  lemma->add_option("--replicas", replicas, "Parallel replicas")->check(CLI::Range(1, 256));

  auto* diag = app.add_subcommand("diagnose", "Per-epoch KL / delta / mu / cos curves as CSV");
  diag->add_option("--run", run_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*stats) {
      if (shared < 0.0) shared = std::accumulate(rates.begin(), rates.end(), 0.0) / static_cast<double>(rates.size());
      mask_stats(rates, shared, measure, n, seed);
    } else if (*tr) {
      return train(config_path, parallel);
    } else if (*ev) {
      const auto r = balm::evaluate_run(run_dir, split);
      std::printf("split,loss,accuracy,weighted_f1\n%s,%.6f,%.6f,%.6f\n", split.c_str(), r.loss, r.accuracy, r.weighted_f1);
    } else if (*lemma) {
      verify_lemma1(lemma_rates, draws, seed, modality, replicas);
    } else if (*diag) {
      std::cout << balm::diagnose_run(run_dir);
    }
  } catch (const balm::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return 0;
}
