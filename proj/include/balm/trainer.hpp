#pragma once

// Training loop: FCM -> encoders -> fusion -> head, L = L_task + tau * L_mod,
// one backward pass, KL-modulated encoder steps, plain steps elsewhere, and
// independently trained unimodal heads.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "balm/backbone.hpp"
#include "balm/data.hpp"
#include "balm/fcm.hpp"
#include "balm/grm.hpp"
#include "balm/masking.hpp"

namespace balm {

struct Ablations {
  bool fcm_on = true;
  bool grm_distribution_on = true;
  bool grm_spatial_on = true;
};

struct TrainConfig {
  double lr = 0.05;
  int epochs = 200;
  std::size_t batch_size = 32;
  std::vector<double> rates{0.3, 0.5, 0.7};
  std::uint64_t seed = 0;
  GrmConfig grm;
  FcmConfig fcm;
  BackboneConfig model;
  Ablations ablations;

  void validate() const;
};

struct Model {
  BackboneParams backbone;
  FcmParams fcm;
  UnimodalHeadParams heads;
  std::vector<Matrix> frozen_descriptors;

  static Model init(std::span<const int> dims, int classes, const TrainConfig& config);
  Model clone() const;
  // Every parameter group, in a fixed order.
  std::vector<ParameterGroup> groups() const;
};

// Throws ContractError if a tensor appears in two groups.
void audit_parameter_groups(std::span<const ParameterGroup> groups);

struct SplitMasks {
  MaskSet train;
  MaskSet val;
  MaskSet test;

  // Independent mask sets per split from one run seed.
  static SplitMasks generate(const MissingRateVector& rates, const DatasetSplits& splits, std::uint64_t seed);
};

struct StepStats {
  double l_task = 0.0;
  double l_mod = 0.0;
  std::vector<double> d_kl;
  std::vector<double> delta;
  std::vector<double> mu;  // coefficients after this step's update
  std::vector<double> cos;
  double equilibrium_gap = 0.0;
};

class Trainer {
 public:
  Trainer(TrainConfig config, const Dataset& train_data, const MaskSet& train_masks);
  Trainer(TrainConfig config, Model model);

  StepStats step(const MultimodalBatch& batch);

  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const ModulationState& modulation() const { return state_; }
  const TrainConfig& config() const { return config_; }
  std::size_t iteration() const { return state_.t; }

 private:
  TrainConfig config_;
  Model model_;
  ModulationState state_;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
};

// Forward-only pass in file order with the configured batch size.
EvalResult evaluate(const Model& model, const TrainConfig& config, const Dataset& data, const MaskSet& masks);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  EvalResult train;
  EvalResult val;
};

struct DiagnosticsRow {
  std::size_t t = 0;
  std::vector<double> d_kl, delta, mu, cos;
  double l_task = 0.0;
  double l_mod = 0.0;
  double equilibrium_gap = 0.0;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  std::vector<DiagnosticsRow> diagnostics;
  int best_epoch = 0;
  EvalResult test;
  bool ema_nonincreasing_final_half = false;
};

struct TrainResult {
  RunRecord record;
  Model best_model;
  Model final_model;
};

TrainResult train(const TrainConfig& config, const DatasetSplits& splits, const SplitMasks& masks);

// Exponential moving average over a window of w epochs (alpha = 2 / (w + 1)).
std::vector<double> ema(std::span<const double> values, int window);

}  // namespace balm
