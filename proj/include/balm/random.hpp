#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "balm/autograd.hpp"

namespace balm {

using Rng = std::mt19937_64;

// Independent stream for (seed, stream) pairs; streams never share state.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x6a09e667u};
  return Rng(seq);
}

// Stream ids used across the library.
namespace streams {
inline constexpr std::uint64_t kBackboneInit = 1;
inline constexpr std::uint64_t kFcmInit = 2;
inline constexpr std::uint64_t kHeadInit = 3;
inline constexpr std::uint64_t kShuffle = 4;
inline constexpr std::uint64_t kMasksTrain = 5;
inline constexpr std::uint64_t kMasksVal = 6;
inline constexpr std::uint64_t kMasksTest = 7;
inline constexpr std::uint64_t kLemma = 8;
}  // namespace streams

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
inline Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

}  // namespace balm
