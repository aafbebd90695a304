#include "balm/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "balm/errors.hpp"
#include "balm/random.hpp"

namespace balm {

std::vector<int> Dataset::dims() const {
  std::vector<int> d;
  for (const auto& f : features) d.push_back(static_cast<int>(f.cols()));
  return d;
}

void Dataset::validate() const {
  if (modality_names.size() != features.size()) throw SchemaError("modality name count differs from feature count");
  if (ids.size() != labels.size()) throw SchemaError("id count differs from label count");
  for (const auto& f : features)
    if (static_cast<std::size_t>(f.rows()) != labels.size()) throw SchemaError("feature row count differs from labels");
  for (int y : labels)
    if (y < 0 || y >= classes) throw SchemaError("label " + std::to_string(y) + " outside [0, classes)");
}

std::size_t MultimodalBatch::available(int m) const {
  return static_cast<std::size_t>(std::count_if(masks.begin(), masks.end(), [m](const auto& e) { return e.present(m); }));
}

void DatasetSpec::validate() const {
  const std::size_t M = dims.size();
  if (M < 2) throw SchemaError("dataset needs at least two modalities");
  if (modality_names.size() != M || snr.size() != M)
    throw SchemaError("modality names, dims and snr must have one entry per modality");
  for (int d : dims)
    if (d <= 0) throw SchemaError("modality dimensions must be positive");
  for (double s : snr)
    if (!(s >= 0.0)) throw SchemaError("snr must be nonnegative");
  if (classes < 2) throw SchemaError("need at least two classes");
  if (n_train == 0 || n_val == 0 || n_test == 0) throw SchemaError("n_train, n_val and n_test must be positive");
}

namespace {

Dataset sample_split(const DatasetSpec& spec, const std::vector<std::vector<Eigen::RowVectorXd>>& protos,
                     std::size_t n, std::uint64_t stream, const std::string& prefix) {
  Rng rng = make_stream(spec.seed, stream);
  std::uniform_int_distribution<int> cls(0, spec.classes - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset d;
  d.modality_names = spec.modality_names;
  d.classes = spec.classes;
  for (int dim : spec.dims) d.features.emplace_back(static_cast<Eigen::Index>(n), dim);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = cls(rng);
    d.labels.push_back(c);
    d.ids.push_back(prefix + std::to_string(i));
    for (std::size_t m = 0; m < spec.dims.size(); ++m) {
      auto row = d.features[m].row(static_cast<Eigen::Index>(i));
      for (Eigen::Index k = 0; k < row.size(); ++k) row(k) = spec.snr[m] * protos[m][static_cast<std::size_t>(c)](k) + noise(rng);
    }
  }
  return d;
}

}  // namespace

DatasetSplits generate_synthetic(const DatasetSpec& spec) {
  spec.validate();
  Rng proto_rng = make_stream(spec.seed, 100);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::vector<Eigen::RowVectorXd>> protos(spec.dims.size());
  for (std::size_t m = 0; m < spec.dims.size(); ++m) {
    for (int c = 0; c < spec.classes; ++c) {
      Eigen::RowVectorXd p(spec.dims[m]);
      for (Eigen::Index k = 0; k < p.size(); ++k) p(k) = g(proto_rng);
      p /= p.norm();
      protos[m].push_back(p);
    }
  }
  return {sample_split(spec, protos, spec.n_train, 101, "train-"), sample_split(spec, protos, spec.n_val, 102, "val-"),
          sample_split(spec, protos, spec.n_test, 103, "test-")};
}

Dataset load_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open feature file " + path.string());
  Dataset d;
  std::vector<std::vector<std::vector<double>>> rows;  // [modality][sample][k]
  std::vector<std::size_t> widths;
  std::string line;
  std::size_t lineno = 0;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::ordered_json rec;
    try {
      rec = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!rec.is_object()) throw SchemaError(where + ": record is not an object");
    for (const char* key : {"id", "label", "features"})
      if (!rec.contains(key)) throw SchemaError(where + ": missing \"" + key + "\"");
    if (!rec["id"].is_string()) throw SchemaError(where + ": \"id\" must be a string");
    if (!rec["label"].is_number_integer() || rec["label"].get<int>() < 0)
      throw SchemaError(where + ": \"label\" must be a nonnegative integer");
    const auto& feats = rec["features"];
    if (!feats.is_object() || feats.empty()) throw SchemaError(where + ": \"features\" must be a nonempty object");

    if (d.modality_names.empty()) {
      for (const auto& [name, _] : feats.items()) d.modality_names.push_back(name);
      rows.resize(d.modality_names.size());
      widths.assign(d.modality_names.size(), 0);
    }
    if (feats.size() != d.modality_names.size()) throw SchemaError(where + ": modality set differs from first record");
    for (std::size_t m = 0; m < d.modality_names.size(); ++m) {
      const auto& name = d.modality_names[m];
      if (!feats.contains(name)) throw SchemaError(where + ": missing modality \"" + name + "\"");
      const auto& arr = feats[name];
      if (!arr.is_array() || arr.empty()) throw SchemaError(where + ": modality \"" + name + "\" must be a nonempty array");
      std::vector<double> v;
      v.reserve(arr.size());
      for (const auto& x : arr) {
        if (!x.is_number()) throw SchemaError(where + ": non-numeric feature in \"" + name + "\"");
        v.push_back(x.get<double>());
      }
      if (rows[m].empty()) widths[m] = v.size();
      if (v.size() != widths[m])
        throw SchemaError(where + ": modality \"" + name + "\" has dimension " + std::to_string(v.size()) +
                          ", expected " + std::to_string(widths[m]));
      rows[m].push_back(std::move(v));
    }
    d.ids.push_back(rec["id"].get<std::string>());
    d.labels.push_back(rec["label"].get<int>());
    max_label = std::max(max_label, d.labels.back());
  }
  d.classes = std::max(max_label + 1, 2);
  for (std::size_t m = 0; m < rows.size(); ++m) {
    Matrix f(static_cast<Eigen::Index>(rows[m].size()), static_cast<Eigen::Index>(widths[m]));
    for (std::size_t i = 0; i < rows[m].size(); ++i)
      for (std::size_t k = 0; k < widths[m]; ++k) f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[m][i][k];
    d.features.push_back(std::move(f));
  }
  return d;
}

void write_features(const std::filesystem::path& path, const Dataset& data) {
  data.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write feature file " + path.string());
  for (std::size_t i = 0; i < data.size(); ++i) {
    nlohmann::ordered_json feats = nlohmann::ordered_json::object();
    for (std::size_t m = 0; m < data.features.size(); ++m) {
      const auto row = data.features[m].row(static_cast<Eigen::Index>(i));
      auto& arr = feats[data.modality_names[m]] = nlohmann::ordered_json::array();
      for (Eigen::Index k = 0; k < row.size(); ++k) arr.push_back(row(k));
    }
    nlohmann::ordered_json rec;
    rec["id"] = data.ids[i];
    rec["label"] = data.labels[i];
    rec["features"] = std::move(feats);
    out << rec.dump() << '\n';
  }
}

namespace {

MultimodalBatch gather(const std::vector<Matrix>& masked, const Dataset& data, const MaskSet& masks,
                       std::span<const std::size_t> index) {
  MultimodalBatch b;
  const auto n = static_cast<Eigen::Index>(index.size());
  for (const auto& f : masked) {
    Matrix rows(n, f.cols());
    for (Eigen::Index r = 0; r < n; ++r) rows.row(r) = f.row(static_cast<Eigen::Index>(index[static_cast<std::size_t>(r)]));
    b.features.push_back(std::move(rows));
  }
  for (std::size_t i : index) {
    b.masks.push_back(masks.masks[i]);
    b.labels.push_back(data.labels[i]);
    b.ids.push_back(data.ids[i]);
  }
  return b;
}

}  // namespace

std::vector<MultimodalBatch> batch_iter(const Dataset& data, const MaskSet& masks, std::size_t batch_size,
                                        std::uint64_t seed, bool shuffle) {
  if (masks.size() != data.size())
    throw ContractError("batch_iter: " + std::to_string(masks.size()) + " masks for " + std::to_string(data.size()) +
                        " samples");
  if (batch_size == 0) throw DomainError("batch_iter: batch size must be positive");
  const auto masked = apply_masks(data.features, masks);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    Rng rng = make_stream(seed, streams::kShuffle);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<MultimodalBatch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, order.size() - start);
    batches.push_back(gather(masked, data, masks, std::span<const std::size_t>(order).subspan(start, len)));
  }
  return batches;
}

MultimodalBatch full_batch(const Dataset& data, const MaskSet& masks) {
  return batch_iter(data, masks, std::max<std::size_t>(data.size(), 1), 0, false).front();
}

}  // namespace balm
