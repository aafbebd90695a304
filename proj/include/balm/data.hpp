#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "balm/autograd.hpp"
#include "balm/masking.hpp"

namespace balm {

// Full (unmasked) multimodal samples. features[m] is (N x d_m).
struct Dataset {
  std::vector<std::string> modality_names;
  std::vector<Matrix> features;
  std::vector<int> labels;
  std::vector<std::string> ids;
  int classes = 0;

  std::size_t size() const { return labels.size(); }
  int modalities() const { return static_cast<int>(features.size()); }
  std::vector<int> dims() const;
  // Throws SchemaError if row counts, ids or labels disagree.
  void validate() const;
};

struct MultimodalBatch {
  std::vector<Matrix> features;  // masked rows are exact zeros
  std::vector<MaskPattern> masks;
  std::vector<int> labels;
  std::vector<std::string> ids;

  std::size_t size() const { return labels.size(); }
  int modalities() const { return static_cast<int>(features.size()); }
  // Number of rows in which modality m is available.
  std::size_t available(int m) const;
};

struct DatasetSpec {
  std::vector<std::string> modality_names{"a", "v", "l"};
  std::vector<int> dims{16, 16, 16};
  int classes = 4;
  std::size_t n_train = 600;
  std::size_t n_val = 200;
  std::size_t n_test = 200;
  std::vector<double> snr{3.0, 3.0, 3.0};
  std::uint64_t seed = 0;

  void validate() const;
};

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

// Class c, modality m: snr[m] * prototype_m[c] + N(0, I), with unit-norm
// seeded prototypes shared by all splits.
DatasetSplits generate_synthetic(const DatasetSpec& spec);

// JSON Lines: {"id": string, "label": int, "features": {name: [reals]}}.
Dataset load_features(const std::filesystem::path& path);
void write_features(const std::filesystem::path& path, const Dataset& data);

// Applies the masks to the whole dataset, then cuts it into batches (the last
// one possibly partial), optionally in a seeded shuffled order.
std::vector<MultimodalBatch> batch_iter(const Dataset& data, const MaskSet& masks, std::size_t batch_size,
                                        std::uint64_t seed, bool shuffle);

// Whole dataset as one masked batch, file order.
MultimodalBatch full_batch(const Dataset& data, const MaskSet& masks);

}  // namespace balm
