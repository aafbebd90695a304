#include "balm/fcm.hpp"

#include <cmath>
#include <numeric>

#include "balm/errors.hpp"

namespace balm {

DescriptorScope parse_descriptor_scope(const std::string& name) {
  if (name == "batch") return DescriptorScope::kBatch;
  if (name == "frozen") return DescriptorScope::kFrozen;
  throw DomainError("unknown descriptor scope '" + name + "' (expected batch or frozen)");
}

std::string to_string(DescriptorScope scope) { return scope == DescriptorScope::kBatch ? "batch" : "frozen"; }

int FcmConfig::resolved_d_global(std::span<const int> dims) const {
  if (d_global > 0) return d_global;
  if (dims.empty()) throw DomainError("cannot derive d_global without modalities");
  const double mean = std::accumulate(dims.begin(), dims.end(), 0.0) / static_cast<double>(dims.size());
  return std::max(1, static_cast<int>(std::lround(mean)));
}

FcmParams FcmParams::init(std::span<const int> dims, int d_global, Rng& rng) {
  const int total = std::accumulate(dims.begin(), dims.end(), 0);
  FcmParams p{Linear::uniform(total, d_global, rng), {}};
  for (int d : dims) p.cal.push_back(Linear::zeros(d_global, d));
  return p;
}

ParameterGroup FcmParams::group() const {
  ParameterGroup g{"fcm", {}};
  g.add("global", global);
  for (std::size_t m = 0; m < cal.size(); ++m) g.add("cal" + std::to_string(m), cal[m]);
  return g;
}

Matrix global_descriptor(const MultimodalBatch& batch, int m, double epsilon) {
  if (batch.size() == 0) throw DomainError("global_descriptor: empty batch");
  const Matrix& x = batch.features[static_cast<std::size_t>(m)];
  return x.colwise().sum() / (epsilon + static_cast<double>(batch.available(m)));
}

std::vector<Matrix> dataset_descriptors(const Dataset& data, const MaskSet& masks, double epsilon) {
  const auto all = full_batch(data, masks);
  std::vector<Matrix> out;
  for (int m = 0; m < all.modalities(); ++m) out.push_back(global_descriptor(all, m, epsilon));
  return out;
}

Tensor cross_modal_context(const Tensor& descriptors, const FcmParams& params) {
  if (descriptors.rows() != 1 || descriptors.cols() != params.global.in_dim())
    throw DimensionError("cross_modal_context: descriptor width " + std::to_string(descriptors.cols()) +
                         " but context layer expects " + std::to_string(params.global.in_dim()));
  return relu(params.global(descriptors));
}

Calibration calibrate(const MultimodalBatch& batch, const FcmParams& params, const FcmConfig& config,
                      const std::vector<Matrix>* frozen_descriptors) {
  const int M = batch.modalities();
  if (static_cast<int>(params.cal.size()) != M) throw DimensionError("calibrate: modality count mismatch");

  std::vector<Tensor> desc;
  for (int m = 0; m < M; ++m) {
    if (config.scope == DescriptorScope::kFrozen) {
      if (!frozen_descriptors) throw ContractError("calibrate: frozen scope without stored descriptors");
      desc.push_back(Tensor::constant((*frozen_descriptors)[static_cast<std::size_t>(m)]));
    } else {
      desc.push_back(Tensor::constant(global_descriptor(batch, m, config.epsilon)));
    }
  }
  const Tensor context = cross_modal_context(concat_cols<double>(std::span<const Tensor>(desc)), params);

  Calibration out;
  const auto rows = static_cast<Eigen::Index>(batch.size());
  for (int m = 0; m < M; ++m) {
    const auto& x = batch.features[static_cast<std::size_t>(m)];
    if (x.cols() != params.cal[static_cast<std::size_t>(m)].out_dim())
      throw DimensionError("calibrate: feature width differs from calibration layer");
    Tensor gate = add_scalar(sigmoid(params.cal[static_cast<std::size_t>(m)](context)), 1.0);
    // The same gate row multiplies every sample of the batch.
    Tensor tiled = matmul(ones(rows, 1), gate);
    out.features.push_back(hadamard(tiled, Tensor::constant(x)));
    out.gates.push_back(gate);
  }
  return out;
}

std::vector<Tensor> uncalibrated(const MultimodalBatch& batch) {
  std::vector<Tensor> out;
  for (const auto& x : batch.features) out.push_back(Tensor::constant(x));
  return out;
}

}  // namespace balm
