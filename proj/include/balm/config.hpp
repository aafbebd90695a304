#pragma once

// Experiment configuration: a flat JSON object with dotted keys, parsed with a
// strict schema (unknown or mistyped keys are rejected together).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "balm/data.hpp"
#include "balm/errors.hpp"
#include "balm/trainer.hpp"

namespace balm {

class ConfigError : public SchemaError {
 public:
  ConfigError(const std::string& what, std::vector<std::string> keys)
      : SchemaError(what), keys_(std::move(keys)) {}
  const std::vector<std::string>& keys() const { return keys_; }

 private:
  std::vector<std::string> keys_;
};

struct ExperimentConfig {
  DatasetSpec data;
  std::filesystem::path features_dir;  // empty: synthetic data from `data`
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output_dir;    // empty: default_output_root()

  // Training config for one seed of the list.
  TrainConfig for_seed(std::uint64_t seed) const;
};

// Keys accepted at the top level of a config document.
const std::vector<std::string>& config_keys();
const std::vector<std::string>& required_config_keys();

ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

// Every key with its resolved value, in config_keys() order.
nlohmann::ordered_json to_json(const ExperimentConfig& config);

// $BALM_OUTPUT_ROOT, or "runs".
std::filesystem::path default_output_root();

// Train/val/test splits described by the config (synthetic or loaded).
DatasetSplits load_splits(const ExperimentConfig& config);

}  // namespace balm
