#pragma once

// Gradient rebalancing: unimodal heads, KL learning-progress coefficients,
// modulated encoder steps and the cosine spatial-alignment loss on
// prediction-head gradients.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "balm/backbone.hpp"
#include "balm/layers.hpp"

namespace balm {

enum class ModLossMode { kCurrent, kLagged };

ModLossMode parse_mod_loss_mode(const std::string& name);
std::string to_string(ModLossMode mode);

struct GrmConfig {
  double rho = 1.4;
  double tau = 0.5;
  double delta_floor = 1e-8;
  ModLossMode mod_loss_mode = ModLossMode::kCurrent;
  bool detach_unimodal = true;

  void validate() const;
};

// F_map: d_emb -> d_h (ReLU), F_pred: d_h -> |Y|, weight shape equal to the main head's.
struct UnimodalHead {
  Linear map;
  Linear pred;
};

struct UnimodalHeadParams {
  std::vector<UnimodalHead> heads;

  static UnimodalHeadParams init(int modalities, int d_emb, int d_h, int classes, Rng& rng);
  ParameterGroup group(int m) const;
};

struct UnimodalOutput {
  std::vector<Tensor> hidden;  // h^m, B x d_h
  std::vector<Prediction> predictions;
};

UnimodalOutput unimodal_forward(std::span<const Tensor> embeddings, const UnimodalHeadParams& params, bool detach);

// sum_i KL(unimodal_i || multimodal_i), evaluated on values only.
double kl_to_reference(const Prediction& unimodal, const Prediction& multimodal);

struct ModulationState {
  std::vector<double> prev_kl;
  std::vector<double> delta_kl;
  std::vector<double> mu;  // starts at 1 (no modulation before any progress is measured)
  double carried_mod_loss = 0.0;
  std::size_t t = 0;

  static ModulationState initial(int modalities);
};

// t == 0: delta = current; otherwise delta = prev - current. Advances t.
void update_progress(ModulationState& state, std::span<const double> current_kl);

// mu_m = rho * sum_{m' != m} d'_{m'} / sum_{m'} d'_{m'}, with d' = max(delta, floor).
std::vector<double> modulation_coefficients(std::span<const double> delta, double rho, double floor);

// theta_m <- theta_m - lr * mu_m * grad for each encoder group.
void modulated_encoder_step(std::span<ParameterGroup> encoders, std::span<const double> mu, double lr);

// Gradient of the softmax cross-entropy w.r.t. the weight of a linear head
// whose input is h: h^T (probs - onehot), divided by B for the mean
// reduction. Stays attached to the graphs of h and probs.
Tensor head_gradient_closed_form(const Tensor& h, const Tensor& probs, std::span<const int> labels,
                                 Reduction reduction = Reduction::kMean);

struct AlignmentLoss {
  Tensor loss;  // sum_m |cos_m * mu_m|, mu constant
  std::vector<double> cosines;
};

AlignmentLoss spatial_alignment_loss(const Tensor& grad_main, std::span<const Tensor> grad_unimodal,
                                     std::span<const double> mu);

// max over pairs |mu_m |g_m| - mu_m' |g_m'|| divided by the mean of mu_m |g_m|.
double equilibrium_gap(std::span<const double> grad_norms, std::span<const double> mu);

// Monte-Carlo check that Bernoulli(1 - r) masking of per-sample losses
// scales the expected encoder gradient by (1 - r).
struct Lemma1Problem {
  std::vector<Matrix> features;  // one per modality, B x d_m
  std::vector<int> labels;
  BackboneParams backbone;       // only the encoders are used
  UnimodalHeadParams heads;

  static Lemma1Problem synthetic(std::uint64_t seed, std::size_t samples = 64);
  Lemma1Problem clone() const;
};

struct Lemma1Options {
  int modality = 0;
  std::size_t draws = 20000;
  std::uint64_t seed = 0;
  int replicas = 4;
};

// Mean over draws of <g_draw, g_full> / <g_full, g_full>, where g is the
// gradient of sum_m sum_i e_i^m loss_i^m w.r.t. the chosen encoder.
double verify_lemma1(const Lemma1Problem& problem, double missing_rate, const Lemma1Options& options);

}  // namespace balm
