#include "balm/backbone.hpp"

#include "balm/errors.hpp"

namespace balm {

FusionVariant parse_fusion_variant(const std::string& name) {
  if (name == "concat") return FusionVariant::kConcat;
  if (name == "attention") return FusionVariant::kAttention;
  throw DomainError("unknown fusion variant '" + name + "' (expected concat or attention)");
}

std::string to_string(FusionVariant v) { return v == FusionVariant::kConcat ? "concat" : "attention"; }

Reduction parse_reduction(const std::string& name) {
  if (name == "mean") return Reduction::kMean;
  if (name == "sum") return Reduction::kSum;
  throw DomainError("unknown loss reduction '" + name + "' (expected mean or sum)");
}

std::string to_string(Reduction r) { return r == Reduction::kMean ? "mean" : "sum"; }

BackboneParams BackboneParams::init(std::span<const int> dims, int classes, const BackboneConfig& config, Rng& rng) {
  BackboneParams p;
  p.variant = config.variant;
  for (int d : dims) p.encoders.push_back({Linear::uniform(d, config.hidden, rng), Linear::uniform(config.hidden, config.d_emb, rng)});
  const auto M = static_cast<Eigen::Index>(dims.size());
  if (config.variant == FusionVariant::kConcat) {
    p.fusion = Linear::uniform(M * config.d_emb, config.d_h, rng);
  } else {
    for (Eigen::Index m = 0; m < M; ++m) p.projection.push_back(Linear::uniform(config.d_emb, config.d_h, rng));
    p.attention_scores = Tensor::parameter(Matrix::Zero(1, M));
  }
  p.head = Linear::uniform(config.d_h, classes, rng);
  return p;
}

ParameterGroup BackboneParams::encoder_group(int m) const {
  ParameterGroup g{"encoder" + std::to_string(m), {}};
  const auto& e = encoders.at(static_cast<std::size_t>(m));
  g.add("first", e.first);
  g.add("second", e.second);
  return g;
}

ParameterGroup BackboneParams::fusion_group() const {
  ParameterGroup g{"fusion", {}};
  if (variant == FusionVariant::kConcat) {
    g.add("concat", fusion);
  } else {
    for (std::size_t m = 0; m < projection.size(); ++m) g.add("proj" + std::to_string(m), projection[m]);
    g.add("scores", attention_scores);
  }
  return g;
}

ParameterGroup BackboneParams::head_group() const {
  ParameterGroup g{"head", {}};
  g.add("pred", head);
  return g;
}

std::vector<Tensor> encode(std::span<const Tensor> features, const BackboneParams& params) {
  if (features.size() != params.encoders.size())
    throw DimensionError("encode: " + std::to_string(features.size()) + " modalities for " +
                         std::to_string(params.encoders.size()) + " encoders");
  std::vector<Tensor> z;
  for (std::size_t m = 0; m < features.size(); ++m) {
    if (features[m].cols() != params.encoders[m].first.in_dim())
      throw DimensionError("encode: modality " + std::to_string(m) + " has width " +
                           std::to_string(features[m].cols()) + ", encoder expects " +
                           std::to_string(params.encoders[m].first.in_dim()));
    z.push_back(params.encoders[m](features[m]));
  }
  return z;
}

Tensor fuse(std::span<const Tensor> embeddings, const BackboneParams& params) {
  if (static_cast<int>(embeddings.size()) != params.modalities())
    throw DimensionError("fuse: embedding count differs from modality count");
  if (params.variant == FusionVariant::kConcat) return relu(params.fusion(concat_cols<double>(embeddings)));

  const Tensor alpha = softmax(params.attention_scores);
  Tensor h;
  for (std::size_t m = 0; m < embeddings.size(); ++m) {
    Tensor term = scale_by(params.projection[m](embeddings[m]), slice_cols(alpha, static_cast<Eigen::Index>(m), 1));
    h = h.defined() ? h + term : term;
  }
  return h;
}

Prediction predict(const Tensor& fused, const Linear& head) {
  Tensor logits = head(fused);
  return {logits, softmax(logits)};
}

Tensor task_loss(const Prediction& pred, std::span<const int> labels, Reduction reduction) {
  return softmax_cross_entropy(pred.logits, labels, reduction).loss;
}

BackboneOutput forward(std::span<const Tensor> features, const BackboneParams& params) {
  BackboneOutput out;
  out.embeddings = encode(features, params);
  out.fused = fuse(out.embeddings, params);
  out.prediction = predict(out.fused, params.head);
  return out;
}

std::vector<int> argmax_rows(const Matrix& probs) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < probs.cols(); ++c)
      if (probs(i, c) > probs(i, best)) best = c;
    out.push_back(static_cast<int>(best));
  }
  return out;
}

}  // namespace balm
