#pragma once

// Test-only statistical oracles: binomial 3-sigma bands and chi-square
// goodness of fit for categorical samplers.

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <cstddef>
#include <vector>

namespace flowda::testing {

/// Counts of `draws` outcomes in [0, categories).
template <class Draw>
std::vector<double> tally(std::size_t categories, std::size_t draws, Draw&& draw) {
  std::vector<double> counts(categories, 0.0);
  for (std::size_t i = 0; i < draws; ++i) counts.at(draw()) += 1.0;
  return counts;
}

/// Every category's count lies within `sigmas` binomial standard deviations
/// of draws * p.
inline bool within_binomial_sigma(const std::vector<double>& counts, const std::vector<double>& p,
                                  double sigmas = 3.0) {
  double n = 0.0;
  for (double c : counts) n += c;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double mean = n * p[i];
    const double sd = std::sqrt(n * p[i] * (1.0 - p[i]));
    if (std::abs(counts[i] - mean) > sigmas * sd + 1e-12) return false;
  }
  return true;
}

/// Pearson chi-square goodness-of-fit p-value; categories with p = 0 must be empty.
inline double chi_square_p(const std::vector<double>& counts, const std::vector<double>& p) {
  double n = 0.0;
  for (double c : counts) n += c;
  double stat = 0.0;
  int df = -1;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) {
      if (counts[i] > 0.0) return 0.0;
      continue;
    }
    const double e = n * p[i];
    stat += (counts[i] - e) * (counts[i] - e) / e;
    ++df;
  }
  if (df < 1) return 1.0;
  boost::math::chi_squared dist(df);
  return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace flowda::testing
