#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace flowda {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed for one (replicate, role) stream. Pure function of its arguments.
constexpr std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t replicate,
                                    std::string_view role) noexcept {
  return mix64(mix64(mix64(base_seed) ^ replicate) ^ fnv1a64(role));
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

/// Repeated categorical draws from fixed weights via a cumulative table.
class CategoricalSampler {
 public:
  explicit CategoricalSampler(std::span<const double> weights) : cdf_(weights.size()) {
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (!(weights[i] >= 0.0) || !std::isfinite(weights[i]))
        throw std::domain_error("CategoricalSampler: negative or non-finite weight");
      acc += weights[i];
      cdf_[i] = acc;
    }
    if (!(acc > 0.0)) throw std::domain_error("CategoricalSampler: all weights are zero");
  }

  std::size_t operator()(Rng& rng) const {
    const double u = std::uniform_real_distribution<double>(0.0, cdf_.back())(rng);
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return it == cdf_.end() ? last_positive() : static_cast<std::size_t>(it - cdf_.begin());
  }

  std::size_t size() const noexcept { return cdf_.size(); }

 private:
  std::size_t last_positive() const {
    std::size_t i = cdf_.size() - 1;
    while (i > 0 && cdf_[i] == cdf_[i - 1]) --i;
    return i;
  }

  std::vector<double> cdf_;
};

/// Draws an index with probability proportional to `weights` (linear domain,
/// need not be normalized). Throws if no weight is positive and finite.
inline std::size_t sample_categorical(std::span<const double> weights, Rng& rng) {
  return CategoricalSampler(weights)(rng);
}

}  // namespace flowda
