#pragma once

// Run directories: everything needed to re-evaluate a trained model without
// the original config file.
//
//   <root>/run-<config hash>-s<seed>/
//     config.json          resolved config, seeds = [seed]
//     record.json          RunRecord
//     diagnostics.csv      per-epoch KL / delta / mu / cos curves
//     model.json           selected-epoch parameters
//     masks_{train,val,test}.jsonl

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "balm/config.hpp"
#include "balm/trainer.hpp"

namespace balm {

// FNV-1a over the resolved config with seeds and output dir removed, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);
std::filesystem::path run_directory(const ExperimentConfig& config, std::uint64_t seed);

nlohmann::ordered_json to_json(const RunRecord& record);
// Columns: t, D_KL_<m>..., delta_<m>..., mu_<m>..., cos_<m>..., L_task, L_mod, equilibrium_gap.
std::string diagnostics_csv(const RunRecord& record, const std::vector<std::string>& modality_names);
std::vector<std::string> diagnostics_columns(const std::vector<std::string>& modality_names);

nlohmann::ordered_json model_to_json(const Model& model);
// Overwrites the parameters of `model`, whose shapes must match the document.
void load_model_values(const nlohmann::json& doc, Model& model);

struct RunOutcome {
  std::filesystem::path dir;
  TrainResult result;
};

// Trains one seed and writes its run directory.
RunOutcome run_seed(const ExperimentConfig& config, std::uint64_t seed);
// All seeds of the config, sequentially or one thread per seed.
std::vector<RunOutcome> run_experiment(const ExperimentConfig& config, bool parallel);

// Recomputes metrics from a run directory's snapshot and saved masks.
EvalResult evaluate_run(const std::filesystem::path& dir, const std::string& split);
// Re-emits the diagnostics CSV from record.json.
std::string diagnose_run(const std::filesystem::path& dir);

}  // namespace balm
