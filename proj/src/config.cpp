#include "balm/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace balm {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct Field {
  std::function<void(ExperimentConfig&, const json&)> read;
  std::function<json(const ExperimentConfig&)> write;
};

template <class T>
T as(const json& v) {
  return v.get<T>();
}

std::uint64_t as_seed(const json& v) {
  if (!v.is_number_integer() || v.get<long long>() < 0) throw json::type_error::create(302, "expected a nonnegative integer", &v);
  return v.get<std::uint64_t>();
}

std::size_t as_count(const json& v) {
  if (!v.is_number_integer() || v.get<long long>() < 0) throw json::type_error::create(302, "expected a nonnegative integer", &v);
  return v.get<std::size_t>();
}

int as_int(const json& v) {
  if (!v.is_number_integer()) throw json::type_error::create(302, "expected an integer", &v);
  return v.get<int>();
}

double as_real(const json& v) {
  if (!v.is_number()) throw json::type_error::create(302, "expected a number", &v);
  return v.get<double>();
}

bool as_bool(const json& v) {
  if (!v.is_boolean()) throw json::type_error::create(302, "expected a boolean", &v);
  return v.get<bool>();
}

std::vector<double> as_reals(const json& v) {
  if (!v.is_array()) throw json::type_error::create(302, "expected an array", &v);
  std::vector<double> out;
  for (const auto& e : v) out.push_back(as_real(e));
  return out;
}

std::vector<int> as_ints(const json& v) {
  if (!v.is_array()) throw json::type_error::create(302, "expected an array", &v);
  std::vector<int> out;
  for (const auto& e : v) out.push_back(as_int(e));
  return out;
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table{
      {"data.modalities", {[](auto& c, const json& v) { c.data.modality_names = as<std::vector<std::string>>(v); },
                           [](const auto& c) { return json(c.data.modality_names); }}},
      {"data.dims", {[](auto& c, const json& v) { c.data.dims = as_ints(v); }, [](const auto& c) { return json(c.data.dims); }}},
      {"data.classes", {[](auto& c, const json& v) { c.data.classes = as_int(v); }, [](const auto& c) { return json(c.data.classes); }}},
      {"data.n_train", {[](auto& c, const json& v) { c.data.n_train = as_count(v); }, [](const auto& c) { return json(c.data.n_train); }}},
      {"data.n_val", {[](auto& c, const json& v) { c.data.n_val = as_count(v); }, [](const auto& c) { return json(c.data.n_val); }}},
      {"data.n_test", {[](auto& c, const json& v) { c.data.n_test = as_count(v); }, [](const auto& c) { return json(c.data.n_test); }}},
      {"data.snr", {[](auto& c, const json& v) { c.data.snr = as_reals(v); }, [](const auto& c) { return json(c.data.snr); }}},
      {"data.seed", {[](auto& c, const json& v) { c.data.seed = as_seed(v); }, [](const auto& c) { return json(c.data.seed); }}},
      {"data.features_dir", {[](auto& c, const json& v) { c.features_dir = as<std::string>(v); },
                             [](const auto& c) { return json(c.features_dir.string()); }}},
      {"mask.rates", {[](auto& c, const json& v) { c.train.rates = as_reals(v); }, [](const auto& c) { return json(c.train.rates); }}},
      {"train.lr", {[](auto& c, const json& v) { c.train.lr = as_real(v); }, [](const auto& c) { return json(c.train.lr); }}},
      {"train.epochs", {[](auto& c, const json& v) { c.train.epochs = as_int(v); }, [](const auto& c) { return json(c.train.epochs); }}},
      {"train.batch_size", {[](auto& c, const json& v) { c.train.batch_size = as_count(v); },
                            [](const auto& c) { return json(c.train.batch_size); }}},
      {"train.loss_reduction", {[](auto& c, const json& v) { c.train.model.reduction = parse_reduction(as<std::string>(v)); },
                                [](const auto& c) { return json(to_string(c.train.model.reduction)); }}},
      {"seeds", {[](auto& c, const json& v) {
                   if (!v.is_array() || v.empty()) throw json::type_error::create(302, "expected a nonempty array", &v);
                   c.seeds.clear();
                   for (const auto& e : v) c.seeds.push_back(as_seed(e));
                 },
                 [](const auto& c) { return json(c.seeds); }}},
      {"grm.rho", {[](auto& c, const json& v) { c.train.grm.rho = as_real(v); }, [](const auto& c) { return json(c.train.grm.rho); }}},
      {"grm.tau", {[](auto& c, const json& v) { c.train.grm.tau = as_real(v); }, [](const auto& c) { return json(c.train.grm.tau); }}},
      {"grm.delta_floor", {[](auto& c, const json& v) { c.train.grm.delta_floor = as_real(v); },
                           [](const auto& c) { return json(c.train.grm.delta_floor); }}},
      {"grm.mod_loss_mode", {[](auto& c, const json& v) { c.train.grm.mod_loss_mode = parse_mod_loss_mode(as<std::string>(v)); },
                             [](const auto& c) { return json(to_string(c.train.grm.mod_loss_mode)); }}},
      {"grm.detach_unimodal", {[](auto& c, const json& v) { c.train.grm.detach_unimodal = as_bool(v); },
                               [](const auto& c) { return json(c.train.grm.detach_unimodal); }}},
      {"fcm.epsilon", {[](auto& c, const json& v) { c.train.fcm.epsilon = as_real(v); }, [](const auto& c) { return json(c.train.fcm.epsilon); }}},
      {"fcm.d_global", {[](auto& c, const json& v) { c.train.fcm.d_global = as_int(v); }, [](const auto& c) { return json(c.train.fcm.d_global); }}},
      {"fcm.descriptor_scope", {[](auto& c, const json& v) { c.train.fcm.scope = parse_descriptor_scope(as<std::string>(v)); },
                                [](const auto& c) { return json(to_string(c.train.fcm.scope)); }}},
      {"model.variant", {[](auto& c, const json& v) { c.train.model.variant = parse_fusion_variant(as<std::string>(v)); },
                         [](const auto& c) { return json(to_string(c.train.model.variant)); }}},
      {"model.d_emb", {[](auto& c, const json& v) { c.train.model.d_emb = as_int(v); }, [](const auto& c) { return json(c.train.model.d_emb); }}},
      {"model.d_h", {[](auto& c, const json& v) { c.train.model.d_h = as_int(v); }, [](const auto& c) { return json(c.train.model.d_h); }}},
      {"model.hidden", {[](auto& c, const json& v) { c.train.model.hidden = as_int(v); }, [](const auto& c) { return json(c.train.model.hidden); }}},
      {"ablation.fcm_on", {[](auto& c, const json& v) { c.train.ablations.fcm_on = as_bool(v); },
                           [](const auto& c) { return json(c.train.ablations.fcm_on); }}},
      {"ablation.grm_distribution_on", {[](auto& c, const json& v) { c.train.ablations.grm_distribution_on = as_bool(v); },
                                        [](const auto& c) { return json(c.train.ablations.grm_distribution_on); }}},
      {"ablation.grm_spatial_on", {[](auto& c, const json& v) { c.train.ablations.grm_spatial_on = as_bool(v); },
                                   [](const auto& c) { return json(c.train.ablations.grm_spatial_on); }}},
      {"output.dir", {[](auto& c, const json& v) { c.output_dir = as<std::string>(v); },
                      [](const auto& c) { return json(c.output_dir.string()); }}},
  };
  return table;
}

std::string joined(const std::vector<std::string>& keys) {
  std::string s;
  for (const auto& k : keys) s += (s.empty() ? "" : ", ") + k;
  return s;
}

}  // namespace

TrainConfig ExperimentConfig::for_seed(std::uint64_t seed) const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, _] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

const std::vector<std::string>& required_config_keys() {
  static const std::vector<std::string> keys{"mask.rates", "train.lr", "train.epochs"};
  return keys;
}

ExperimentConfig parse_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object", {});
  std::map<std::string, const Field*> by_name;
  for (const auto& [name, f] : fields()) by_name[name] = &f;

  std::vector<std::string> unknown, missing, invalid;
  for (const auto& [key, _] : doc.items())
    if (!by_name.count(key)) unknown.push_back(key);
  for (const auto& key : required_config_keys())
    if (!doc.contains(key)) missing.push_back(key);

  ExperimentConfig c;
  std::ostringstream why;
  for (const auto& [name, f] : fields()) {
    if (!doc.contains(name)) continue;
    try {
      f.read(c, doc.at(name));
    } catch (const json::exception& e) {
      invalid.push_back(name);
      why << "\n  " << name << ": " << e.what();
    } catch (const DomainError& e) {
      invalid.push_back(name);
      why << "\n  " << name << ": " << e.what();
    }
  }
  if (!unknown.empty() || !missing.empty() || !invalid.empty()) {
    std::vector<std::string> all;
    std::string msg = "invalid config";
    if (!unknown.empty()) msg += "; unknown keys: " + joined(unknown);
    if (!missing.empty()) msg += "; missing keys: " + joined(missing);
    if (!invalid.empty()) msg += "; invalid values: " + joined(invalid) + why.str();
    for (auto* v : {&unknown, &missing, &invalid}) all.insert(all.end(), v->begin(), v->end());
    throw ConfigError(msg, all);
  }

  try {
    if (c.features_dir.empty()) c.data.validate();
    c.train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what(), {});
  }
  if (c.features_dir.empty() && static_cast<std::size_t>(c.train.rates.size()) != c.data.dims.size())
    throw ConfigError("invalid config: mask.rates needs one rate per modality", {"mask.rates"});
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

ordered_json to_json(const ExperimentConfig& config) {
  ordered_json out = ordered_json::object();
  for (const auto& [name, f] : fields()) out[name] = f.write(config);
  return out;
}

std::filesystem::path default_output_root() {
  const char* env = std::getenv("BALM_OUTPUT_ROOT");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

DatasetSplits load_splits(const ExperimentConfig& config) {
  if (config.features_dir.empty()) return generate_synthetic(config.data);
  DatasetSplits s{load_features(config.features_dir / "train.jsonl"), load_features(config.features_dir / "val.jsonl"),
                  load_features(config.features_dir / "test.jsonl")};
  const int classes = std::max({s.train.classes, s.val.classes, s.test.classes});
  for (Dataset* d : {&s.train, &s.val, &s.test}) {
    if (d->modality_names != s.train.modality_names || d->dims() != s.train.dims())
      throw SchemaError("feature splits in " + config.features_dir.string() + " disagree on modalities");
    d->classes = classes;
  }
  if (s.train.modalities() != static_cast<int>(config.train.rates.size()))
    throw ConfigError("invalid config: mask.rates needs one rate per modality", {"mask.rates"});
  return s;
}

}  // namespace balm
