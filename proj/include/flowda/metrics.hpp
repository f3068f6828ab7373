#pragma once

// OD matrices, store n-gram tables, the L1 discrepancy and replicate
// aggregation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include "flowda/grid.hpp"
#include "flowda/model.hpp"

namespace flowda {

/// Transition counts, origin on rows and destination on columns.
using ODMatrix = Grid<std::int64_t>;
using MeanODMatrix = Grid<double>;

inline ODMatrix build_od(std::span<const Path> paths, std::size_t store_count) {
  ODMatrix od(store_count, store_count, 0);
  for (const auto& p : paths)
    for (std::size_t i = 1; i < p.size(); ++i) ++od.at(p[i - 1], p[i]);
  return od;
}

template <class T>
std::int64_t total(const Grid<T>& g) {
  std::int64_t s = 0;
  for (auto v : g.flat()) s += static_cast<std::int64_t>(v);
  return s;
}

/// Sum of absolute element-wise differences.
template <class A, class B>
double discrepancy(const Grid<A>& a, const Grid<B>& b) {
  if (!(a.rows() == b.rows() && a.cols() == b.cols()))
    throw std::invalid_argument("discrepancy: matrices differ in shape");
  double s = 0.0;
  auto fa = a.flat();
  auto fb = b.flat();
  for (std::size_t i = 0; i < fa.size(); ++i)
    s += std::abs(static_cast<double>(fa[i]) - static_cast<double>(fb[i]));
  return s;
}

using Ngram = std::vector<StoreId>;

struct NgramTable {
  std::size_t n = 3;
  std::map<Ngram, std::int64_t> entries;

  std::int64_t frequency(const Ngram& key) const {
    auto it = entries.find(key);
    return it == entries.end() ? 0 : it->second;
  }
  std::int64_t total() const {
    std::int64_t s = 0;
    for (const auto& [_, f] : entries) s += f;
    return s;
  }
};

inline NgramTable ngram_table(std::span<const Path> paths, std::size_t n = 3) {
  if (n == 0) throw std::invalid_argument("ngram_table: n must be >= 1");
  NgramTable t{n, {}};
  for (const auto& p : paths) {
    if (p.size() < n) continue;
    for (std::size_t i = 0; i + n <= p.size(); ++i) ++t.entries[Ngram(p.begin() + i, p.begin() + i + n)];
  }
  return t;
}

/// k most frequent n-grams; ties resolved by lexicographic tuple order.
template <class Freq>
std::vector<std::pair<Ngram, Freq>> top_k(const std::map<Ngram, Freq>& entries, std::size_t k) {
  std::vector<std::pair<Ngram, Freq>> v(entries.begin(), entries.end());
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (v.size() > k) v.resize(k);
  return v;
}

inline std::vector<std::pair<Ngram, std::int64_t>> top_k(const NgramTable& t, std::size_t k) {
  return top_k(t.entries, k);
}

template <class T>
MeanODMatrix mean_matrix(std::span<const Grid<T>> runs) {
  if (runs.empty()) throw std::invalid_argument("mean_matrix: no runs");
  MeanODMatrix m(runs.front().rows(), runs.front().cols(), 0.0);
  for (const auto& r : runs) {
    if (!r.same_shape(runs.front()))
      throw std::invalid_argument("mean_matrix: runs differ in shape");
    auto src = r.flat();
    auto dst = m.flat();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += static_cast<double>(src[i]);
  }
  for (double& v : m.flat()) v /= static_cast<double>(runs.size());
  return m;
}

inline std::map<Ngram, double> mean_ngrams(std::span<const NgramTable> runs) {
  std::map<Ngram, double> out;
  if (runs.empty()) return out;
  for (const auto& t : runs)
    for (const auto& [key, f] : t.entries) out[key] += static_cast<double>(f);
  for (auto& [_, f] : out) f /= static_cast<double>(runs.size());
  return out;
}

struct SummaryStats {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single value
};

inline SummaryStats summarize(std::span<const double> xs) {
  SummaryStats s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

/// Estimated-vs-reference comparison across replicates, reported both as the
/// mean of per-run discrepancies and as the discrepancy between mean matrices.
struct RunAggregate {
  MeanODMatrix mean_reference;
  MeanODMatrix mean_estimate;
  std::vector<double> per_run;
  SummaryStats per_run_stats;
  double discrepancy_of_means = 0.0;
};

inline RunAggregate aggregate_runs(std::span<const ODMatrix> reference, std::span<const ODMatrix> estimate) {
  if (reference.size() != estimate.size() || reference.empty())
    throw std::invalid_argument("aggregate_runs: need equally many (>= 1) reference and estimate runs");
  RunAggregate agg;
  for (std::size_t r = 0; r < reference.size(); ++r) agg.per_run.push_back(discrepancy(reference[r], estimate[r]));
  agg.per_run_stats = summarize(agg.per_run);
  agg.mean_reference = mean_matrix(reference);
  agg.mean_estimate = mean_matrix(estimate);
  agg.discrepancy_of_means = discrepancy(agg.mean_reference, agg.mean_estimate);
  return agg;
}

}  // namespace flowda
