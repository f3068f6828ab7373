#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace flowda {

/// log(sum(exp(x))) without overflow. Returns -inf for an empty or all -inf input.
inline double log_sum_exp(std::span<const double> x) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : x) {
    if (std::isnan(v)) throw std::domain_error("log_sum_exp: NaN input");
    hi = std::max(hi, v);
  }
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - hi);
  return hi + std::log(acc);
}

/// Shifts log weights in place so that exp(x) sums to one.
inline void normalize_log_weights(std::span<double> x) {
  const double lse = log_sum_exp(x);
  if (!std::isfinite(lse)) throw std::domain_error("normalize_log_weights: no finite weight");
  for (double& v : x) v -= lse;
}

/// Normalized linear-domain probabilities from log weights.
inline std::vector<double> softmax(std::span<const double> x) {
  const double lse = log_sum_exp(x);
  if (!std::isfinite(lse)) throw std::domain_error("softmax: no finite weight");
  const double hi = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sum += out[i] = std::exp(x[i] - hi);
  for (double& v : out) v /= sum;
  return out;
}

}  // namespace flowda
