#include "balm/run.hpp"

#include <cstdio>
#include <fstream>
#include <future>
#include <sstream>

#include "balm/errors.hpp"

namespace balm {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

ordered_json eval_json(const EvalResult& r) {
  return ordered_json{{"loss", r.loss}, {"accuracy", r.accuracy}, {"weighted_f1", r.weighted_f1}};
}

ordered_json matrix_json(const Matrix& m) {
  ordered_json data = ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return ordered_json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const json& j, const std::string& where) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw SchemaError(where + ": data length does not match rows x cols");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j2 = 0; j2 < cols; ++j2) m(i, j2) = data[static_cast<std::size_t>(i * cols + j2)].get<double>();
  return m;
}

}  // namespace

std::string config_hash(const ExperimentConfig& config) {
  ordered_json doc = to_json(config);
  doc.erase("seeds");
  doc.erase("output.dir");
  const std::string text = doc.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::filesystem::path run_directory(const ExperimentConfig& config, std::uint64_t seed) {
  const auto root = config.output_dir.empty() ? default_output_root() : config.output_dir;
  return root / ("run-" + config_hash(config) + "-s" + std::to_string(seed));
}

ordered_json to_json(const RunRecord& record) {
  ordered_json epochs = ordered_json::array();
  for (const auto& e : record.epochs)
    epochs.push_back(ordered_json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"train", eval_json(e.train)},
                                  {"val", eval_json(e.val)}});
  ordered_json diag = ordered_json::array();
  for (const auto& d : record.diagnostics)
    diag.push_back(ordered_json{{"t", d.t},
                                {"d_kl", d.d_kl},
                                {"delta", d.delta},
                                {"mu", d.mu},
                                {"cos", d.cos},
                                {"l_task", d.l_task},
                                {"l_mod", d.l_mod},
                                {"equilibrium_gap", d.equilibrium_gap}});
  return ordered_json{{"epochs", std::move(epochs)},
                      {"diagnostics", std::move(diag)},
                      {"best_epoch", record.best_epoch},
                      {"test", eval_json(record.test)},
                      {"ema_nonincreasing_final_half", record.ema_nonincreasing_final_half}};
}

std::vector<std::string> diagnostics_columns(const std::vector<std::string>& names) {
  std::vector<std::string> cols{"t"};
  for (const char* prefix : {"D_KL_", "delta_", "mu_", "cos_"})
    for (const auto& n : names) cols.push_back(prefix + n);
  for (const char* c : {"L_task", "L_mod", "equilibrium_gap"}) cols.emplace_back(c);
  return cols;
}

std::string diagnostics_csv(const RunRecord& record, const std::vector<std::string>& names) {
  std::ostringstream out;
  const auto cols = diagnostics_columns(names);
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& d : record.diagnostics) {
    if (d.d_kl.size() != names.size()) throw DimensionError("diagnostics row width differs from modality count");
    out << d.t;
    for (const auto* v : {&d.d_kl, &d.delta, &d.mu, &d.cos})
      for (double x : *v) out << ',' << fmt(x);
    out << ',' << fmt(d.l_task) << ',' << fmt(d.l_mod) << ',' << fmt(d.equilibrium_gap) << '\n';
  }
  return out.str();
}

ordered_json model_to_json(const Model& model) {
  ordered_json groups = ordered_json::object();
  for (const auto& g : model.groups()) {
    ordered_json params = ordered_json::object();
    for (const auto& [name, t] : g.params) params[name] = matrix_json(t.value());
    groups[g.name] = std::move(params);
  }
  ordered_json frozen = ordered_json::array();
  for (const auto& d : model.frozen_descriptors) frozen.push_back(matrix_json(d));
  return ordered_json{{"variant", to_string(model.backbone.variant)},
                      {"groups", std::move(groups)},
                      {"frozen_descriptors", std::move(frozen)}};
}

void load_model_values(const json& doc, Model& model) {
  try {
    if (parse_fusion_variant(doc.at("variant").get<std::string>()) != model.backbone.variant)
      throw SchemaError("model snapshot: fusion variant differs from config");
    const auto& groups = doc.at("groups");
    for (auto& g : model.groups()) {
      const auto& saved = groups.at(g.name);
      if (saved.size() != g.params.size()) throw SchemaError("model snapshot: group " + g.name + " has the wrong size");
      for (auto& [name, t] : g.params) {
        Matrix m = matrix_from_json(saved.at(name), g.name + "." + name);
        if (m.rows() != t.rows() || m.cols() != t.cols())
          throw SchemaError("model snapshot: " + g.name + "." + name + " has the wrong shape");
        t.mutable_value() = std::move(m);
      }
    }
    model.frozen_descriptors.clear();
    for (const auto& d : doc.at("frozen_descriptors")) model.frozen_descriptors.push_back(matrix_from_json(d, "frozen"));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("model snapshot: ") + e.what());
  }
}

RunOutcome run_seed(const ExperimentConfig& config, std::uint64_t seed) {
  const DatasetSplits splits = load_splits(config);
  const TrainConfig tc = config.for_seed(seed);
  const MissingRateVector rates(tc.rates);
  const SplitMasks masks = SplitMasks::generate(rates, splits, seed);

  RunOutcome out{run_directory(config, seed), train(tc, splits, masks)};
  std::error_code ec;
  std::filesystem::create_directories(out.dir, ec);
  if (ec) throw IoError("cannot create run directory " + out.dir.string() + ": " + ec.message());

  ExperimentConfig snapshot = config;
  snapshot.seeds = {seed};
  snapshot.output_dir.clear();
  ordered_json record = to_json(out.result.record);
  record["seed"] = seed;
  record["config"] = to_json(snapshot);
  record["masks"] = ordered_json{{"train", "masks_train.jsonl"}, {"val", "masks_val.jsonl"}, {"test", "masks_test.jsonl"}};
  write_text(out.dir / "config.json", to_json(snapshot).dump(2) + "\n");
  write_text(out.dir / "record.json", record.dump(2) + "\n");
  write_text(out.dir / "diagnostics.csv", diagnostics_csv(out.result.record, splits.train.modality_names));
  write_text(out.dir / "model.json", model_to_json(out.result.best_model).dump() + "\n");
  write_mask_file(out.dir / "masks_train.jsonl", splits.train.ids, masks.train);
  write_mask_file(out.dir / "masks_val.jsonl", splits.val.ids, masks.val);
  write_mask_file(out.dir / "masks_test.jsonl", splits.test.ids, masks.test);
  return out;
}

std::vector<RunOutcome> run_experiment(const ExperimentConfig& config, bool parallel) {
  std::vector<RunOutcome> outcomes;
  if (!parallel) {
    for (auto seed : config.seeds) outcomes.push_back(run_seed(config, seed));
    return outcomes;
  }
  std::vector<std::future<RunOutcome>> jobs;
  for (auto seed : config.seeds) jobs.push_back(std::async(std::launch::async, run_seed, std::cref(config), seed));
  for (auto& j : jobs) outcomes.push_back(j.get());
  return outcomes;
}

EvalResult evaluate_run(const std::filesystem::path& dir, const std::string& split) {
  if (split != "train" && split != "val" && split != "test")
    throw DomainError("unknown split '" + split + "' (expected train, val or test)");
  const ExperimentConfig config = parse_config(read_json(dir / "config.json"));
  const TrainConfig tc = config.for_seed(config.seeds.front());
  const DatasetSplits splits = load_splits(config);
  const Dataset& data = split == "train" ? splits.train : split == "val" ? splits.val : splits.test;

  const MaskFile masks = read_mask_file(dir / ("masks_" + split + ".jsonl"));
  if (masks.ids != data.ids) throw SchemaError("mask file ids do not match the " + split + " split");

  Model model = Model::init(splits.train.dims(), splits.train.classes, tc);
  load_model_values(read_json(dir / "model.json"), model);
  return evaluate(model, tc, data, masks.masks);
}

std::string diagnose_run(const std::filesystem::path& dir) {
  const json doc = read_json(dir / "record.json");
  RunRecord record;
  std::vector<std::string> names;
  try {
    names = doc.at("config").at("data.modalities").get<std::vector<std::string>>();
    for (const auto& d : doc.at("diagnostics")) {
      DiagnosticsRow row;
      row.t = d.at("t").get<std::size_t>();
      row.d_kl = d.at("d_kl").get<std::vector<double>>();
      row.delta = d.at("delta").get<std::vector<double>>();
      row.mu = d.at("mu").get<std::vector<double>>();
      row.cos = d.at("cos").get<std::vector<double>>();
      row.l_task = d.at("l_task").get<double>();
      row.l_mod = d.at("l_mod").get<double>();
      row.equilibrium_gap = d.at("equilibrium_gap").get<double>();
      record.diagnostics.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    throw SchemaError((dir / "record.json").string() + ": " + e.what());
  }
  if (!record.diagnostics.empty() && record.diagnostics.front().d_kl.size() != names.size()) {
    names.clear();
    for (std::size_t m = 0; m < record.diagnostics.front().d_kl.size(); ++m) names.push_back(std::to_string(m));
  }
  return diagnostics_csv(record, names);
}

}  // namespace balm
