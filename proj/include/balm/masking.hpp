#pragma once

// Missing-modality masks: pattern distributions under shared (SMR) and
// imbalanced (IMR) missing rates, their divergence, and the deterministic
// mask-set construction with its realized-ratio error bound.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "balm/autograd.hpp"

namespace balm {

inline constexpr int kMaxModalities = 16;

// Per-modality probability that the modality is absent, each in [0, 1).
class MissingRateVector {
 public:
  explicit MissingRateVector(std::vector<double> rates);
  static MissingRateVector shared(double rate, int modalities);

  int modalities() const { return static_cast<int>(rates_.size()); }
  double operator[](int m) const { return rates_[static_cast<std::size_t>(m)]; }
  const std::vector<double>& values() const { return rates_; }
  // Probability that every modality is missing at once.
  double all_missing() const;

 private:
  std::vector<double> rates_;
};

// Availability bits; bit m set means modality m is present.
class MaskPattern {
 public:
  MaskPattern() = default;
  MaskPattern(std::uint32_t bits, int modalities);
  static MaskPattern all_present(int modalities) { return {(1u << modalities) - 1u, modalities}; }
  static MaskPattern from_bits(std::span<const int> present);

  std::uint32_t bits() const { return bits_; }
  int modalities() const { return modalities_; }
  bool present(int m) const { return (bits_ >> m) & 1u; }
  int present_count() const;
  // "101" style, modality 0 first.
  std::string label() const;

  friend bool operator==(const MaskPattern&, const MaskPattern&) = default;

 private:
  std::uint32_t bits_ = 0;
  int modalities_ = 0;
};

// Probabilities over the 2^M - 1 patterns with at least one modality present,
// indexed by pattern bits; slot 0 (all missing) is always zero.
struct PatternDistribution {
  int modalities = 0;
  std::vector<double> probs;

  double operator()(const MaskPattern& e) const { return probs[e.bits()]; }
  double total() const;
};

PatternDistribution smr_distribution(double shared_rate, int modalities);
PatternDistribution imr_distribution(const MissingRateVector& rates);

enum class Divergence { kKL, kJS };

Divergence parse_divergence(const std::string& name);

// D(p || q) over valid patterns; KL floors q at 1e-12, JS uses the midpoint.
double pattern_divergence(const PatternDistribution& p, const PatternDistribution& q, Divergence measure);

// Divergence of the IMR pattern distribution from the SMR one.
double delta_imr(const MissingRateVector& rates, double shared_rate, Divergence measure = Divergence::kKL);

struct MaskSet {
  int modalities = 0;
  std::vector<MaskPattern> masks;
  std::vector<double> realized_ratios;

  std::size_t size() const { return masks.size(); }
  // Number of samples carrying each pattern, indexed by pattern bits.
  std::vector<std::size_t> pattern_counts() const;
  static MaskSet from_masks(int modalities, std::vector<MaskPattern> masks);
  static MaskSet all_present(int modalities, std::size_t n);
};

// (1/M) * prod_m r_m: worst-case realized-ratio error of generate_masks when
// every pattern target is an integer.
double mask_error_bound(const MissingRateVector& rates);

// Deterministic apportionment of target pattern counts, with the all-missing
// share moved onto the single-present patterns, shuffled onto sample indices.
MaskSet generate_masks(const MissingRateVector& rates, std::size_t n, std::uint64_t seed);

// Integer per-pattern counts before shuffling (indexed by bits, slot 0 empty).
std::vector<std::size_t> mask_pattern_counts(const MissingRateVector& rates, std::size_t n);

// Zero the rows of masked modalities. features[m] is (N x d_m).
std::vector<Matrix> apply_masks(std::span<const Matrix> features, const MaskSet& masks);

struct RatioStats {
  std::vector<double> mean;
  std::vector<double> variance;
};

// Monte-Carlo mean and (unbiased) variance of the empirical missing ratio
// under unconstrained independent Bernoulli(r) masking.
RatioStats empirical_ratio_stats(double shared_rate, int modalities, std::size_t n, std::size_t trials,
                                 std::uint64_t seed);

// JSON Lines mask files: {"id": string, "mask": [0|1, ...]} per sample.
void write_mask_file(const std::filesystem::path& path, std::span<const std::string> ids, const MaskSet& masks);

struct MaskFile {
  std::vector<std::string> ids;
  MaskSet masks;
};
MaskFile read_mask_file(const std::filesystem::path& path);

}  // namespace balm
