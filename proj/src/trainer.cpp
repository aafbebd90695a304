#include "balm/trainer.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "balm/errors.hpp"
#include "balm/metrics.hpp"
#include "balm/random.hpp"

namespace balm {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw DomainError("train.lr must be positive");
  if (epochs < 1) throw DomainError("train.epochs must be at least 1");
  if (batch_size < 1) throw DomainError("train.batch_size must be at least 1");
  if (!(fcm.epsilon > 0.0)) throw DomainError("fcm.epsilon must be positive");
  if (fcm.d_global < 0) throw DomainError("fcm.d_global must be nonnegative");
  if (model.d_emb < 1 || model.d_h < 1 || model.hidden < 1) throw DomainError("model dimensions must be positive");
  grm.validate();
  MissingRateVector{rates};
}

namespace {

Linear clone(const Linear& l) { return {l.weight.clone(), l.bias.clone()}; }

std::vector<Linear> clone(const std::vector<Linear>& ls) {
  std::vector<Linear> out;
  for (const auto& l : ls) out.push_back(clone(l));
  return out;
}

}  // namespace

Model Model::init(std::span<const int> dims, int classes, const TrainConfig& config) {
  Model m;
  Rng backbone_rng = make_stream(config.seed, streams::kBackboneInit);
  m.backbone = BackboneParams::init(dims, classes, config.model, backbone_rng);
  Rng fcm_rng = make_stream(config.seed, streams::kFcmInit);
  m.fcm = FcmParams::init(dims, config.fcm.resolved_d_global(dims), fcm_rng);
  Rng head_rng = make_stream(config.seed, streams::kHeadInit);
  m.heads = UnimodalHeadParams::init(static_cast<int>(dims.size()), config.model.d_emb, config.model.d_h, classes,
                                     head_rng);
  return m;
}

Model Model::clone() const {
  Model c;
  c.backbone.variant = backbone.variant;
  for (const auto& e : backbone.encoders) c.backbone.encoders.push_back({balm::clone(e.first), balm::clone(e.second)});
  if (backbone.variant == FusionVariant::kConcat) {
    c.backbone.fusion = balm::clone(backbone.fusion);
  } else {
    c.backbone.projection = balm::clone(backbone.projection);
    c.backbone.attention_scores = backbone.attention_scores.clone();
  }
  c.backbone.head = balm::clone(backbone.head);
  c.fcm.global = balm::clone(fcm.global);
  c.fcm.cal = balm::clone(fcm.cal);
  for (const auto& h : heads.heads) c.heads.heads.push_back({balm::clone(h.map), balm::clone(h.pred)});
  c.frozen_descriptors = frozen_descriptors;
  return c;
}

std::vector<ParameterGroup> Model::groups() const {
  std::vector<ParameterGroup> g;
  for (int m = 0; m < backbone.modalities(); ++m) g.push_back(backbone.encoder_group(m));
  g.push_back(backbone.fusion_group());
  g.push_back(backbone.head_group());
  g.push_back(fcm.group());
  for (int m = 0; m < static_cast<int>(heads.heads.size()); ++m) g.push_back(heads.group(m));
  return g;
}

void audit_parameter_groups(std::span<const ParameterGroup> groups) {
  std::unordered_set<const void*> seen;
  for (const auto& g : groups)
    for (const auto& [name, t] : g.params)
      if (!seen.insert(t.node().get()).second)
        throw ContractError("parameter " + g.name + "." + name + " belongs to more than one group");
}

SplitMasks SplitMasks::generate(const MissingRateVector& rates, const DatasetSplits& splits, std::uint64_t seed) {
  auto make = [&](const Dataset& d, std::uint64_t stream) {
    if (d.size() == 0) return MaskSet::from_masks(rates.modalities(), {});
    return generate_masks(rates, d.size(), seed * 1000003ULL + stream);
  };
  return {make(splits.train, streams::kMasksTrain), make(splits.val, streams::kMasksVal),
          make(splits.test, streams::kMasksTest)};
}

Trainer::Trainer(TrainConfig config, const Dataset& train_data, const MaskSet& train_masks)
    : Trainer(config, Model::init(train_data.dims(), train_data.classes, config)) {
  if (config_.fcm.scope == DescriptorScope::kFrozen)
    model_.frozen_descriptors = dataset_descriptors(train_data, train_masks, config_.fcm.epsilon);
}

Trainer::Trainer(TrainConfig config, Model model)
    : config_(std::move(config)), model_(std::move(model)), state_(ModulationState::initial(model_.backbone.modalities())) {
  config_.validate();
  auto groups = model_.groups();
  audit_parameter_groups(groups);
}

namespace {

std::vector<Tensor> model_inputs(const Model& model, const TrainConfig& config, const MultimodalBatch& batch) {
  if (!config.ablations.fcm_on) return uncalibrated(batch);
  return calibrate(batch, model.fcm, config.fcm, model.frozen_descriptors.empty() ? nullptr : &model.frozen_descriptors)
      .features;
}

[[noreturn]] void numeric_abort(const std::string& what, const MultimodalBatch& batch, std::size_t t) {
  std::ostringstream msg;
  msg << "non-finite " << what << " at iteration " << t << "; batch ids:";
  for (const auto& id : batch.ids) msg << ' ' << id;
  throw NumericError(msg.str());
}

}  // namespace

StepStats Trainer::step(const MultimodalBatch& batch) {
  const int M = model_.backbone.modalities();
  const auto& grm = config_.grm;
  const auto& ab = config_.ablations;
  const Reduction reduction = config_.model.reduction;
  const std::span<const int> labels(batch.labels);

  const auto inputs = model_inputs(model_, config_, batch);
  const BackboneOutput out = forward(inputs, model_.backbone);
  const Tensor l_task = task_loss(out.prediction, labels, reduction);

  const UnimodalOutput uni = unimodal_forward(out.embeddings, model_.heads, grm.detach_unimodal);
  const Tensor grad_main = head_gradient_closed_form(out.fused, out.prediction.probs, labels, reduction);
  std::vector<Tensor> grad_uni;
  for (int m = 0; m < M; ++m)
    grad_uni.push_back(head_gradient_closed_form(uni.hidden[static_cast<std::size_t>(m)],
                                                 uni.predictions[static_cast<std::size_t>(m)].probs, labels, reduction)
                           .detach());
  AlignmentLoss align = spatial_alignment_loss(grad_main, grad_uni, state_.mu);

  StepStats stats;
  stats.l_task = l_task.item();
  stats.cos = align.cosines;

  Tensor loss = l_task;
  if (ab.grm_spatial_on) {
    if (grm.mod_loss_mode == ModLossMode::kCurrent) {
      stats.l_mod = align.loss.item();
      if (grm.tau != 0.0) loss = loss + scale(align.loss, grm.tau);
    } else {
      stats.l_mod = state_.carried_mod_loss;
      if (grm.tau != 0.0) loss = loss + Tensor::scalar(grm.tau * state_.carried_mod_loss);
    }
  }
  if (!std::isfinite(loss.item())) numeric_abort("loss", batch, state_.t);
  loss.backward();

  // Unimodal heads learn from their own losses; with live embeddings those
  // losses also reach the encoders before the encoder step.
  Tensor uni_loss;
  for (int m = 0; m < M; ++m) {
    Tensor lm = task_loss(uni.predictions[static_cast<std::size_t>(m)], labels, reduction);
    uni_loss = uni_loss.defined() ? uni_loss + lm : lm;
  }
  if (!std::isfinite(uni_loss.item())) numeric_abort("unimodal loss", batch, state_.t);
  uni_loss.backward();

  auto groups = model_.groups();
  for (const auto& g : groups)
    for (const auto& [name, t] : g.params)
      if (t.has_grad() && !t.grad().allFinite()) numeric_abort("gradient of " + g.name + "." + name, batch, state_.t);

  std::vector<double> applied(static_cast<std::size_t>(M), 1.0);
  if (ab.grm_distribution_on) applied = state_.mu;
  std::vector<ParameterGroup> encoders;
  std::vector<double> norms;
  for (int m = 0; m < M; ++m) {
    encoders.push_back(model_.backbone.encoder_group(m));
    norms.push_back(std::sqrt(encoders.back().grad_squared_norm()));
  }
  stats.equilibrium_gap = equilibrium_gap(norms, applied);
  modulated_encoder_step(encoders, applied, config_.lr);
  auto fusion = model_.backbone.fusion_group();
  sgd_step(fusion, config_.lr, 1.0);
  auto head = model_.backbone.head_group();
  sgd_step(head, config_.lr, 1.0);
  auto fcm = model_.fcm.group();
  if (ab.fcm_on) sgd_step(fcm, config_.lr, 1.0);
  for (int m = 0; m < M; ++m) {
    auto g = model_.heads.group(m);
    sgd_step(g, config_.lr, 1.0);
  }

  std::vector<double> kl(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m)
    kl[static_cast<std::size_t>(m)] = kl_to_reference(uni.predictions[static_cast<std::size_t>(m)], out.prediction);
  update_progress(state_, kl);
  state_.mu = modulation_coefficients(state_.delta_kl, grm.rho, grm.delta_floor);
  double carried = 0.0;
  for (int m = 0; m < M; ++m)
    carried += std::abs(align.cosines[static_cast<std::size_t>(m)] * state_.mu[static_cast<std::size_t>(m)]);
  state_.carried_mod_loss = carried;

  stats.d_kl = kl;
  stats.delta = state_.delta_kl;
  stats.mu = state_.mu;
  return stats;
}

EvalResult evaluate(const Model& model, const TrainConfig& config, const Dataset& data, const MaskSet& masks) {
  EvalResult r;
  if (data.size() == 0) return r;
  std::vector<int> predicted;
  double total = 0.0;
  for (const auto& batch : batch_iter(data, masks, config.batch_size, 0, false)) {
    const auto out = forward(model_inputs(model, config, batch), model.backbone);
    total += softmax_cross_entropy(out.prediction.logits, std::span<const int>(batch.labels), Reduction::kSum).loss.item();
    const auto p = argmax_rows(out.prediction.probs.value());
    predicted.insert(predicted.end(), p.begin(), p.end());
  }
  r.loss = total / static_cast<double>(data.size());
  r.accuracy = accuracy(predicted, data.labels);
  r.weighted_f1 = weighted_f1(predicted, data.labels, data.classes);
  return r;
}

std::vector<double> ema(std::span<const double> values, int window) {
  std::vector<double> out;
  const double alpha = 2.0 / (static_cast<double>(window) + 1.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc = i == 0 ? values[i] : alpha * values[i] + (1.0 - alpha) * acc;
    out.push_back(acc);
  }
  return out;
}

namespace {

void accumulate(std::vector<double>& sum, const std::vector<double>& v) {
  if (sum.empty()) sum.assign(v.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) sum[i] += v[i];
}

std::vector<double> divided(std::vector<double> v, double n) {
  for (double& x : v) x /= n;
  return v;
}

}  // namespace

TrainResult train(const TrainConfig& config, const DatasetSplits& splits, const SplitMasks& masks) {
  Trainer trainer(config, splits.train, masks.train);
  TrainResult result{{}, trainer.model().clone(), {}};
  RunRecord& rec = result.record;
  double best_wf1 = -1.0;
  std::vector<double> epoch_losses;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const std::uint64_t shuffle_seed = config.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch);
    const auto batches = batch_iter(splits.train, masks.train, config.batch_size, shuffle_seed, true);
    DiagnosticsRow row;
    for (const auto& batch : batches) {
      const StepStats s = trainer.step(batch);
      accumulate(row.d_kl, s.d_kl);
      accumulate(row.delta, s.delta);
      accumulate(row.mu, s.mu);
      accumulate(row.cos, s.cos);
      row.l_task += s.l_task;
      row.l_mod += s.l_mod;
      row.equilibrium_gap += s.equilibrium_gap;
    }
    const auto n = static_cast<double>(batches.size());
    row.t = trainer.iteration();
    row.d_kl = divided(row.d_kl, n);
    row.delta = divided(row.delta, n);
    row.mu = divided(row.mu, n);
    row.cos = divided(row.cos, n);
    row.l_task /= n;
    row.l_mod /= n;
    row.equilibrium_gap /= n;
    epoch_losses.push_back(row.l_task);

    EpochRecord er;
    er.epoch = epoch;
    er.train_loss = row.l_task;
    er.train = evaluate(trainer.model(), config, splits.train, masks.train);
    er.val = evaluate(trainer.model(), config, splits.val, masks.val);
    // Strict improvement keeps the earlier epoch on ties.
    if (er.val.weighted_f1 > best_wf1) {
      best_wf1 = er.val.weighted_f1;
      rec.best_epoch = epoch;
      result.best_model = trainer.model().clone();
    }
    rec.epochs.push_back(er);
    rec.diagnostics.push_back(std::move(row));
  }

  rec.test = evaluate(result.best_model, config, splits.test, masks.test);
  const auto smoothed = ema(epoch_losses, 10);
  bool monotone = true;
  for (std::size_t i = smoothed.size() / 2 + 1; i < smoothed.size(); ++i) monotone = monotone && smoothed[i] <= smoothed[i - 1];
  rec.ema_nonincreasing_final_half = monotone;
  result.final_model = trainer.model().clone();
  return result;
}

}  // namespace balm
