#include "balm/grm.hpp"

#include <cmath>
#include <future>
#include <numeric>
#include <random>

#include "balm/errors.hpp"
#include "balm/random.hpp"

namespace balm {

ModLossMode parse_mod_loss_mode(const std::string& name) {
  if (name == "current") return ModLossMode::kCurrent;
  if (name == "lagged") return ModLossMode::kLagged;
  throw DomainError("unknown mod_loss_mode '" + name + "' (expected current or lagged)");
}

std::string to_string(ModLossMode mode) { return mode == ModLossMode::kCurrent ? "current" : "lagged"; }

void GrmConfig::validate() const {
  if (!(rho > 0.0)) throw DomainError("grm.rho must be positive");
  if (!(tau >= 0.0)) throw DomainError("grm.tau must be nonnegative");
  if (!(delta_floor > 0.0)) throw DomainError("grm.delta_floor must be positive");
}

UnimodalHeadParams UnimodalHeadParams::init(int modalities, int d_emb, int d_h, int classes, Rng& rng) {
  UnimodalHeadParams p;
  for (int m = 0; m < modalities; ++m) p.heads.push_back({Linear::uniform(d_emb, d_h, rng), Linear::uniform(d_h, classes, rng)});
  return p;
}

ParameterGroup UnimodalHeadParams::group(int m) const {
  ParameterGroup g{"unimodal" + std::to_string(m), {}};
  const auto& h = heads.at(static_cast<std::size_t>(m));
  g.add("map", h.map);
  g.add("pred", h.pred);
  return g;
}

UnimodalOutput unimodal_forward(std::span<const Tensor> embeddings, const UnimodalHeadParams& params, bool detach) {
  if (embeddings.size() != params.heads.size()) throw DimensionError("unimodal_forward: modality count mismatch");
  UnimodalOutput out;
  for (std::size_t m = 0; m < embeddings.size(); ++m) {
    const Tensor z = detach ? embeddings[m].detach() : embeddings[m];
    Tensor h = relu(params.heads[m].map(z));
    out.predictions.push_back(predict(h, params.heads[m].pred));
    out.hidden.push_back(std::move(h));
  }
  return out;
}

double kl_to_reference(const Prediction& unimodal, const Prediction& multimodal) {
  return kl_divergence(unimodal.probs.detach(), multimodal.probs.detach()).item();
}

ModulationState ModulationState::initial(int modalities) {
  const auto M = static_cast<std::size_t>(modalities);
  return {std::vector<double>(M, 0.0), std::vector<double>(M, 0.0), std::vector<double>(M, 1.0), 0.0, 0};
}

void update_progress(ModulationState& state, std::span<const double> current_kl) {
  if (state.prev_kl.size() != current_kl.size()) throw DimensionError("update_progress: modality count mismatch");
  for (std::size_t m = 0; m < current_kl.size(); ++m) {
    state.delta_kl[m] = state.t == 0 ? current_kl[m] : state.prev_kl[m] - current_kl[m];
    state.prev_kl[m] = current_kl[m];
  }
  ++state.t;
}

std::vector<double> modulation_coefficients(std::span<const double> delta, double rho, double floor) {
  if (!(rho > 0.0)) throw DomainError("modulation_coefficients: rho must be positive");
  std::vector<double> floored(delta.begin(), delta.end());
  for (double& d : floored) d = std::max(d, floor);
  const double total = std::accumulate(floored.begin(), floored.end(), 0.0);
  std::vector<double> mu(floored.size());
  for (std::size_t m = 0; m < floored.size(); ++m) {
    double others = 0.0;
    for (std::size_t k = 0; k < floored.size(); ++k)
      if (k != m) others += floored[k];
    mu[m] = rho * others / total;
  }
  return mu;
}

void modulated_encoder_step(std::span<ParameterGroup> encoders, std::span<const double> mu, double lr) {
  if (encoders.size() != mu.size()) throw DimensionError("modulated_encoder_step: one coefficient per encoder");
  for (std::size_t m = 0; m < encoders.size(); ++m) sgd_step(encoders[m], lr, mu[m]);
}

Tensor head_gradient_closed_form(const Tensor& h, const Tensor& probs, std::span<const int> labels,
                                 Reduction reduction) {
  if (h.rows() != probs.rows() || static_cast<Eigen::Index>(labels.size()) != probs.rows())
    throw DimensionError("head_gradient_closed_form: batch sizes differ");
  Matrix onehot = Matrix::Zero(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= probs.cols()) throw IndexError("head_gradient_closed_form: label out of range");
    onehot(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  Tensor g = matmul(transpose(h), probs - Tensor::constant(onehot));
  return reduction == Reduction::kMean ? scale(g, 1.0 / static_cast<double>(h.rows())) : g;
}

AlignmentLoss spatial_alignment_loss(const Tensor& grad_main, std::span<const Tensor> grad_unimodal,
                                     std::span<const double> mu) {
  if (grad_unimodal.size() != mu.size()) throw DimensionError("spatial_alignment_loss: one coefficient per modality");
  AlignmentLoss out;
  for (std::size_t m = 0; m < grad_unimodal.size(); ++m) {
    Tensor c = cosine_similarity(grad_unimodal[m], grad_main);
    out.cosines.push_back(c.item());
    Tensor term = abs(scale(c, mu[m]));
    out.loss = out.loss.defined() ? out.loss + term : term;
  }
  if (!out.loss.defined()) out.loss = Tensor::scalar(0.0);
  return out;
}

double equilibrium_gap(std::span<const double> grad_norms, std::span<const double> mu) {
  if (grad_norms.size() != mu.size()) throw DimensionError("equilibrium_gap: one coefficient per modality");
  std::vector<double> scaled(mu.size());
  for (std::size_t m = 0; m < mu.size(); ++m) scaled[m] = mu[m] * grad_norms[m];
  const double mean = std::accumulate(scaled.begin(), scaled.end(), 0.0) / static_cast<double>(scaled.size());
  if (mean == 0.0) return 0.0;
  double gap = 0.0;
  for (std::size_t a = 0; a < scaled.size(); ++a)
    for (std::size_t b = a + 1; b < scaled.size(); ++b) gap = std::max(gap, std::abs(scaled[a] - scaled[b]));
  return gap / mean;
}

// ---------------------------------------------------------------------------

Lemma1Problem Lemma1Problem::synthetic(std::uint64_t seed, std::size_t samples) {
  constexpr int kClasses = 4;
  const std::vector<int> dims{16, 16, 16};
  Rng rng = make_stream(seed, streams::kLemma);
  Lemma1Problem p;
  for (int d : dims) p.features.push_back(gaussian(static_cast<Eigen::Index>(samples), d, rng));
  std::uniform_int_distribution<int> cls(0, kClasses - 1);
  for (std::size_t i = 0; i < samples; ++i) p.labels.push_back(cls(rng));
  BackboneConfig cfg;
  p.backbone = BackboneParams::init(dims, kClasses, cfg, rng);
  p.heads = UnimodalHeadParams::init(static_cast<int>(dims.size()), cfg.d_emb, cfg.d_h, kClasses, rng);
  return p;
}

namespace {

Linear clone(const Linear& l) { return {l.weight.clone(), l.bias.clone()}; }

// Encoder gradient of sum_m sum_i w_i^m loss_i^m, flattened.
Eigen::VectorXd masked_encoder_gradient(const Lemma1Problem& p, const std::vector<std::vector<double>>& weights,
                                        int modality) {
  const auto M = p.features.size();
  Tensor objective;
  for (std::size_t m = 0; m < M; ++m) {
    const Tensor z = p.backbone.encoders[m](Tensor::constant(p.features[m]));
    const Tensor h = relu(p.heads.heads[m].map(z));
    const Tensor logits = p.heads.heads[m].pred(h);
    Tensor loss = softmax_cross_entropy<double>(logits, p.labels, Reduction::kMean, weights[m]).loss;
    objective = objective.defined() ? objective + loss : loss;
  }
  ParameterGroup enc = p.backbone.encoder_group(modality);
  enc.zero_grad();
  objective.backward();
  Eigen::Index total = 0;
  for (const auto& [_, t] : enc.params) total += t.size();
  Eigen::VectorXd g(total);
  Eigen::Index at = 0;
  for (const auto& [_, t] : enc.params) {
    g.segment(at, t.size()) = Eigen::Map<const Eigen::VectorXd>(t.grad().data(), t.size());
    at += t.size();
  }
  return g;
}

}  // namespace

Lemma1Problem Lemma1Problem::clone() const {
  Lemma1Problem c;
  c.features = features;
  c.labels = labels;
  c.backbone.variant = backbone.variant;
  for (const auto& e : backbone.encoders) c.backbone.encoders.push_back({balm::clone(e.first), balm::clone(e.second)});
  for (const auto& h : heads.heads) c.heads.heads.push_back({balm::clone(h.map), balm::clone(h.pred)});
  return c;
}

double verify_lemma1(const Lemma1Problem& problem, double missing_rate, const Lemma1Options& options) {
  if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw DomainError("verify_lemma1: rate outside [0, 1)");
  if (options.draws == 0 || options.replicas < 1) throw DomainError("verify_lemma1: need draws and replicas");
  const auto M = problem.features.size();
  const std::size_t B = problem.labels.size();
  if (options.modality < 0 || static_cast<std::size_t>(options.modality) >= M)
    throw IndexError("verify_lemma1: modality out of range");

  const std::vector<std::vector<double>> full_weights(M, std::vector<double>(B, 1.0));
  const Eigen::VectorXd reference = masked_encoder_gradient(problem, full_weights, options.modality);
  const double ref_sq = reference.dot(reference);
  if (ref_sq == 0.0) throw NumericError("verify_lemma1: reference gradient vanishes");

  // Replicas own cloned parameters and their own RNG stream; partial sums are
  // reduced in replica order, so the result does not depend on scheduling.
  const auto replicas = static_cast<std::size_t>(options.replicas);
  auto run = [&](std::size_t replica) {
    Lemma1Problem local = problem.clone();
    Rng rng = make_stream(options.seed, 1000 + replica);
    std::bernoulli_distribution present(1.0 - missing_rate);
    std::vector<std::vector<double>> weights(M, std::vector<double>(B));
    double acc = 0.0;
    for (std::size_t k = replica; k < options.draws; k += replicas) {
      for (auto& w : weights)
        for (double& e : w) e = present(rng) ? 1.0 : 0.0;
      const Eigen::VectorXd g = masked_encoder_gradient(local, weights, options.modality);
      acc += g.dot(reference) / ref_sq;
    }
    return acc;
  };
  std::vector<std::future<double>> parts;
  for (std::size_t r = 0; r < replicas; ++r) parts.push_back(std::async(std::launch::async, run, r));
  double total = 0.0;
  for (auto& f : parts) total += f.get();
  return total / static_cast<double>(options.draws);
}

}  // namespace balm
