#include "balm/masking.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "balm/errors.hpp"
#include "balm/random.hpp"

namespace balm {

namespace {

void check_modalities(int modalities) {
  if (modalities < 2) throw DomainError("at least two modalities are required");
  if (modalities > kMaxModalities) throw DomainError("too many modalities");
}

void check_rate(double r) {
  if (!(r >= 0.0 && r < 1.0)) throw DomainError("missing rate " + std::to_string(r) + " outside [0, 1)");
}

double pattern_weight(std::uint32_t bits, std::span<const double> rates) {
  double w = 1.0;
  for (std::size_t m = 0; m < rates.size(); ++m) w *= ((bits >> m) & 1u) ? (1.0 - rates[m]) : rates[m];
  return w;
}

PatternDistribution normalized_distribution(std::span<const double> rates) {
  const int M = static_cast<int>(rates.size());
  PatternDistribution d;
  d.modalities = M;
  d.probs.assign(std::size_t{1} << M, 0.0);
  double all_missing = 1.0;
  for (double r : rates) all_missing *= r;
  const double norm = 1.0 - all_missing;
  for (std::uint32_t bits = 1; bits < d.probs.size(); ++bits) d.probs[bits] = pattern_weight(bits, rates) / norm;
  return d;
}

double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t k = 1; k < p.size(); ++k)
    if (p[k] > 0.0) s += p[k] * std::log(p[k] / std::max(q[k], kProbabilityFloor));
  return std::max(s, 0.0);
}

}  // namespace

MissingRateVector::MissingRateVector(std::vector<double> rates) : rates_(std::move(rates)) {
  check_modalities(static_cast<int>(rates_.size()));
  for (double r : rates_) check_rate(r);
}

MissingRateVector MissingRateVector::shared(double rate, int modalities) {
  check_modalities(modalities);
  return MissingRateVector(std::vector<double>(static_cast<std::size_t>(modalities), rate));
}

double MissingRateVector::all_missing() const {
  double p = 1.0;
  for (double r : rates_) p *= r;
  return p;
}

MaskPattern::MaskPattern(std::uint32_t bits, int modalities) : bits_(bits), modalities_(modalities) {
  if (modalities < 1 || modalities > kMaxModalities) throw DomainError("invalid modality count");
  if (bits == 0) throw DomainError("mask pattern must keep at least one modality");
  if (bits >> modalities) throw DomainError("mask pattern has bits beyond the modality count");
}

MaskPattern MaskPattern::from_bits(std::span<const int> present) {
  std::uint32_t bits = 0;
  for (std::size_t m = 0; m < present.size(); ++m) {
    if (present[m] != 0 && present[m] != 1) throw DomainError("mask entries must be 0 or 1");
    if (present[m]) bits |= 1u << m;
  }
  return {bits, static_cast<int>(present.size())};
}

int MaskPattern::present_count() const { return std::popcount(bits_); }

std::string MaskPattern::label() const {
  std::string s;
  for (int m = 0; m < modalities_; ++m) s.push_back(present(m) ? '1' : '0');
  return s;
}

double PatternDistribution::total() const { return std::accumulate(probs.begin(), probs.end(), 0.0); }

PatternDistribution smr_distribution(double shared_rate, int modalities) {
  check_rate(shared_rate);
  check_modalities(modalities);
  std::vector<double> rates(static_cast<std::size_t>(modalities), shared_rate);
  return normalized_distribution(rates);
}

PatternDistribution imr_distribution(const MissingRateVector& rates) { return normalized_distribution(rates.values()); }

Divergence parse_divergence(const std::string& name) {
  if (name == "kl" || name == "KL") return Divergence::kKL;
  if (name == "js" || name == "JS") return Divergence::kJS;
  throw DomainError("unknown divergence '" + name + "' (expected kl or js)");
}

double pattern_divergence(const PatternDistribution& p, const PatternDistribution& q, Divergence measure) {
  if (p.modalities != q.modalities) throw DimensionError("pattern distributions over different modality counts");
  if (measure == Divergence::kKL) return kl(p.probs, q.probs);
  std::vector<double> mid(p.probs.size());
  for (std::size_t k = 0; k < mid.size(); ++k) mid[k] = 0.5 * (p.probs[k] + q.probs[k]);
  return 0.5 * kl(p.probs, mid) + 0.5 * kl(q.probs, mid);
}

double delta_imr(const MissingRateVector& rates, double shared_rate, Divergence measure) {
  return pattern_divergence(imr_distribution(rates), smr_distribution(shared_rate, rates.modalities()), measure);
}

std::vector<std::size_t> MaskSet::pattern_counts() const {
  std::vector<std::size_t> counts(std::size_t{1} << modalities, 0);
  for (const auto& e : masks) ++counts[e.bits()];
  return counts;
}

MaskSet MaskSet::from_masks(int modalities, std::vector<MaskPattern> masks) {
  MaskSet set;
  set.modalities = modalities;
  set.realized_ratios.assign(static_cast<std::size_t>(modalities), 0.0);
  std::vector<std::size_t> missing(static_cast<std::size_t>(modalities), 0);
  for (const auto& e : masks) {
    if (e.modalities() != modalities) throw DimensionError("mask pattern width differs from modality count");
    for (int m = 0; m < modalities; ++m)
      if (!e.present(m)) ++missing[static_cast<std::size_t>(m)];
  }
  if (!masks.empty())
    for (int m = 0; m < modalities; ++m)
      set.realized_ratios[static_cast<std::size_t>(m)] =
          static_cast<double>(missing[static_cast<std::size_t>(m)]) / static_cast<double>(masks.size());
  set.masks = std::move(masks);
  return set;
}

MaskSet MaskSet::all_present(int modalities, std::size_t n) {
  return from_masks(modalities, std::vector<MaskPattern>(n, MaskPattern::all_present(modalities)));
}

double mask_error_bound(const MissingRateVector& rates) { return rates.all_missing() / rates.modalities(); }

std::vector<std::size_t> mask_pattern_counts(const MissingRateVector& rates, std::size_t n) {
  const int M = rates.modalities();
  const std::size_t patterns = std::size_t{1} << M;

  // Largest-remainder apportionment over all 2^M patterns, all-missing included.
  std::vector<std::size_t> counts(patterns);
  std::vector<double> remainder(patterns);
  std::size_t assigned = 0;
  for (std::uint32_t bits = 0; bits < patterns; ++bits) {
    const double target = static_cast<double>(n) * pattern_weight(bits, rates.values());
    // Tolerance absorbs products such as 0.3 * 0.5 * 1000 landing just below an integer.
    const double fl = std::floor(target + 1e-9);
    counts[bits] = static_cast<std::size_t>(fl);
    remainder[bits] = std::max(0.0, target - fl);
    assigned += counts[bits];
  }
  if (assigned > n) throw ContractError("mask apportionment overflow");
  std::vector<std::uint32_t> order(patterns);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % patterns]];

  // Move the all-missing share onto the M patterns with a single modality present.
  const std::size_t all_missing = counts[0];
  counts[0] = 0;
  const std::size_t share = all_missing / static_cast<std::size_t>(M);
  const std::size_t leftover = all_missing % static_cast<std::size_t>(M);
  for (int m = 0; m < M; ++m)
    counts[std::size_t{1} << m] += share + (static_cast<std::size_t>(m) < leftover ? 1 : 0);
  return counts;
}

MaskSet generate_masks(const MissingRateVector& rates, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw DomainError("generate_masks: need at least one sample");
  const int M = rates.modalities();
  const auto counts = mask_pattern_counts(rates, n);
  std::vector<MaskPattern> masks;
  masks.reserve(n);
  for (std::uint32_t bits = 1; bits < counts.size(); ++bits)
    masks.insert(masks.end(), counts[bits], MaskPattern(bits, M));
  Rng rng = make_stream(seed, 0);
  std::shuffle(masks.begin(), masks.end(), rng);
  return MaskSet::from_masks(M, std::move(masks));
}

std::vector<Matrix> apply_masks(std::span<const Matrix> features, const MaskSet& masks) {
  if (static_cast<int>(features.size()) != masks.modalities)
    throw ContractError("apply_masks: " + std::to_string(features.size()) + " modalities but masks cover " +
                        std::to_string(masks.modalities));
  std::vector<Matrix> out(features.begin(), features.end());
  for (std::size_t m = 0; m < out.size(); ++m) {
    if (static_cast<std::size_t>(out[m].rows()) != masks.size())
      throw ContractError("apply_masks: " + std::to_string(masks.size()) + " masks for " +
                          std::to_string(out[m].rows()) + " samples");
    for (std::size_t i = 0; i < masks.size(); ++i)
      if (!masks.masks[i].present(static_cast<int>(m))) out[m].row(static_cast<Eigen::Index>(i)).setZero();
  }
  return out;
}

RatioStats empirical_ratio_stats(double shared_rate, int modalities, std::size_t n, std::size_t trials,
                                 std::uint64_t seed) {
  check_rate(shared_rate);
  check_modalities(modalities);
  if (trials == 0 || n == 0) throw DomainError("empirical_ratio_stats: trials and n must be positive");
  const auto M = static_cast<std::size_t>(modalities);
  RatioStats stats{std::vector<double>(M, 0.0), std::vector<double>(M, 0.0)};
  for (std::size_t m = 0; m < M; ++m) {
    Rng rng = make_stream(seed, m);
    std::bernoulli_distribution missing(shared_rate);
    // Welford accumulation.
    double mean = 0.0, m2 = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      std::size_t k = 0;
      for (std::size_t i = 0; i < n; ++i) k += missing(rng) ? 1 : 0;
      const double ratio = static_cast<double>(k) / static_cast<double>(n);
      const double d = ratio - mean;
      mean += d / static_cast<double>(t + 1);
      m2 += d * (ratio - mean);
    }
    stats.mean[m] = mean;
    stats.variance[m] = trials > 1 ? m2 / static_cast<double>(trials - 1) : 0.0;
  }
  return stats;
}

void write_mask_file(const std::filesystem::path& path, std::span<const std::string> ids, const MaskSet& masks) {
  if (ids.size() != masks.size()) throw ContractError("write_mask_file: id count differs from mask count");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write mask file " + path.string());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::vector<int> bits;
    for (int m = 0; m < masks.modalities; ++m) bits.push_back(masks.masks[i].present(m) ? 1 : 0);
    nlohmann::json rec{{"id", ids[i]}, {"mask", bits}};
    out << rec.dump() << '\n';
  }
}

MaskFile read_mask_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mask file " + path.string());
  MaskFile file;
  std::vector<MaskPattern> masks;
  int width = -1;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!rec.is_object() || !rec.contains("id") || !rec["id"].is_string() || !rec.contains("mask") ||
        !rec["mask"].is_array())
      throw SchemaError(where + ": expected {\"id\": string, \"mask\": [0|1, ...]}");
    std::vector<int> bits;
    for (const auto& b : rec["mask"]) {
      if (!b.is_number_integer()) throw SchemaError(where + ": mask entries must be 0 or 1");
      bits.push_back(b.get<int>());
    }
    if (width < 0) width = static_cast<int>(bits.size());
    if (static_cast<int>(bits.size()) != width) throw SchemaError(where + ": inconsistent mask width");
    try {
      masks.push_back(MaskPattern::from_bits(bits));
    } catch (const DomainError& e) {
      throw SchemaError(where + ": " + e.what());
    }
    file.ids.push_back(rec["id"].get<std::string>());
  }
  file.masks = MaskSet::from_masks(std::max(width, 0), std::move(masks));
  return file;
}

}  // namespace balm
