#pragma once

// Feature calibration: per-modality averages of the available rows, a shared
// cross-modal context, and a sigmoid gate (1 + sigma(w_m)) rescaling every
// row of modality m. Masked rows stay exactly zero.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "balm/data.hpp"
#include "balm/layers.hpp"

namespace balm {

enum class DescriptorScope { kBatch, kFrozen };

DescriptorScope parse_descriptor_scope(const std::string& name);
std::string to_string(DescriptorScope scope);

struct FcmConfig {
  double epsilon = 1e-8;
  int d_global = 0;  // 0 selects round(mean of the modality dims)
  DescriptorScope scope = DescriptorScope::kBatch;

  int resolved_d_global(std::span<const int> dims) const;
};

struct FcmParams {
  Linear global;            // concat(d_1..d_M) -> d_global
  std::vector<Linear> cal;  // d_global -> d_m

  // Context layer uniform-initialized, calibration layers zero so every gate starts at 1.5.
  static FcmParams init(std::span<const int> dims, int d_global, Rng& rng);
  ParameterGroup group() const;
};

// (sum_i x~_i^m) / (epsilon + sum_i e_i^m) over the batch, as a 1 x d_m row.
Matrix global_descriptor(const MultimodalBatch& batch, int m, double epsilon);

// Descriptors over a whole masked dataset, for the frozen scope.
std::vector<Matrix> dataset_descriptors(const Dataset& data, const MaskSet& masks, double epsilon);

// ReLU(concat W + b) for a 1 x sum(d_m) descriptor row.
Tensor cross_modal_context(const Tensor& descriptors, const FcmParams& params);

struct Calibration {
  std::vector<Tensor> features;  // x^_m, same shapes as the batch features
  std::vector<Tensor> gates;     // 1 + sigma(w_m), 1 x d_m
};

Calibration calibrate(const MultimodalBatch& batch, const FcmParams& params, const FcmConfig& config,
                      const std::vector<Matrix>* frozen_descriptors = nullptr);

// Lift the raw masked features into constant tensors (FCM disabled).
std::vector<Tensor> uncalibrated(const MultimodalBatch& batch);

}  // namespace balm
