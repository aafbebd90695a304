#pragma once

// Per-modality MLP encoders, a fusion network (concatenation or attention),
// and a linear softmax head. The head weight is (d_h x |Y|), which is the
// shape the unimodal heads mirror for gradient comparison.

#include <span>
#include <string>
#include <vector>

#include "balm/layers.hpp"

namespace balm {

enum class FusionVariant { kConcat, kAttention };

FusionVariant parse_fusion_variant(const std::string& name);
std::string to_string(FusionVariant v);

struct BackboneConfig {
  FusionVariant variant = FusionVariant::kConcat;
  int d_emb = 32;
  int d_h = 32;
  int hidden = 64;
  Reduction reduction = Reduction::kMean;
};

Reduction parse_reduction(const std::string& name);
std::string to_string(Reduction r);

// d_m -> hidden (ReLU) -> d_emb.
struct Encoder {
  Linear first;
  Linear second;

  Tensor operator()(const Tensor& x) const { return second(relu(first(x))); }
};

struct BackboneParams {
  FusionVariant variant = FusionVariant::kConcat;
  std::vector<Encoder> encoders;
  Linear fusion;                  // concat: (M * d_emb) -> d_h
  std::vector<Linear> projection; // attention: d_emb -> d_h per modality
  Tensor attention_scores;        // attention: 1 x M
  Linear head;                    // d_h -> |Y|

  static BackboneParams init(std::span<const int> dims, int classes, const BackboneConfig& config, Rng& rng);

  int modalities() const { return static_cast<int>(encoders.size()); }
  ParameterGroup encoder_group(int m) const;
  ParameterGroup fusion_group() const;
  ParameterGroup head_group() const;
};

struct Prediction {
  Tensor logits;  // B x |Y|
  Tensor probs;   // B x |Y|, rows sum to one
};

std::vector<Tensor> encode(std::span<const Tensor> features, const BackboneParams& params);
Tensor fuse(std::span<const Tensor> embeddings, const BackboneParams& params);
Prediction predict(const Tensor& fused, const Linear& head);
Tensor task_loss(const Prediction& pred, std::span<const int> labels, Reduction reduction = Reduction::kMean);

struct BackboneOutput {
  std::vector<Tensor> embeddings;
  Tensor fused;
  Prediction prediction;
};

BackboneOutput forward(std::span<const Tensor> features, const BackboneParams& params);

// Row-wise argmax, ties to the lowest class index.
std::vector<int> argmax_rows(const Matrix& probs);

}  // namespace balm
