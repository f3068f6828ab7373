#pragma once

// Truth runs and the pseudo-observation products derived from them: per-step
// store inflow counts (plain and per attribute) and a biased sample of
// completed store sequences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowda/metrics.hpp"
#include "flowda/model.hpp"
#include "flowda/random.hpp"

namespace flowda {

struct ObservationRecord {
  std::size_t step = 0;
  std::vector<std::int64_t> inflow;     // per store
  Grid<std::int64_t> inflow_by_attr;    // group x store

  ObservationRecord() = default;
  ObservationRecord(std::size_t step_, std::size_t groups, std::size_t stores)
      : step(step_), inflow(stores, 0), inflow_by_attr(groups, stores, 0) {}

  void add(GroupId group, StoreId store) {
    ++inflow.at(store);
    ++inflow_by_attr.at(group, store);
  }

  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto v : inflow) s += v;
    return s;
  }

  /// inflow[j] equals the attribute-row sum for every store j.
  bool marginals_consistent() const {
    for (std::size_t j = 0; j < inflow.size(); ++j) {
      std::int64_t s = 0;
      for (std::size_t g = 0; g < inflow_by_attr.rows(); ++g) s += inflow_by_attr(g, j);
      if (s != inflow[j]) return false;
    }
    return true;
  }

  friend bool operator==(const ObservationRecord&, const ObservationRecord&) = default;
};

/// Observation records indexed by step; index 0 holds the initial spawn.
using ObservationSeries = std::vector<ObservationRecord>;

struct ArchivedPath {
  AgentId agent = 0;
  GroupId group = 0;
  Path path;
};

struct TruthRun {
  ObservationSeries observations;
  std::vector<Entry> events;
  std::vector<Path> paths;              // every spawned agent, complete or not
  std::vector<GroupId> groups;          // parallel to `paths`
  std::vector<ArchivedPath> archive;    // completed (stationary) agents only
  std::vector<std::size_t> active_per_step;
  ODMatrix od;
  std::size_t agents_spawned = 0;
  std::vector<std::size_t> spawned_per_group;
};

/// Rebuilds the observation series from an entry log.
inline ObservationSeries replay_observations(std::span<const Entry> events, std::size_t horizon,
                                             std::size_t groups, std::size_t stores, bool count_spawn_as_inflow) {
  ObservationSeries out;
  out.reserve(horizon + 1);
  for (std::size_t t = 0; t <= horizon; ++t) out.emplace_back(t, groups, stores);
  for (const auto& e : events) {
    if (e.spawn && !count_spawn_as_inflow) continue;
    out.at(e.step).add(e.group, e.store);
  }
  return out;
}

inline std::vector<ArchivedPath> completed_paths(const WorldState& world) {
  std::vector<ArchivedPath> out;
  for (const auto& a : world.agents)
    if (a.status == AgentStatus::stationary) out.push_back({a.id, a.group, a.path});
  return out;
}

/// Runs the ground-truth world with the plain choice model and uniform
/// placement, recording every store entry.
inline TruthRun run_truth(const SimConfig& cfg, bool count_spawn_as_inflow = true) {
  cfg.validate();
  Rng rng(cfg.rng_seed);
  const ChoiceModel model(cfg);
  const ModelMover mover{&model};
  const UniformPlacer placer{cfg.store_count};

  TruthRun run;
  auto world = make_world(cfg);
  auto record_step = [&](std::span<const Entry> entries) {
    ObservationRecord rec(world.step, cfg.group_count, cfg.store_count);
    for (const auto& e : entries)
      if (!e.spawn || count_spawn_as_inflow) rec.add(e.group, e.store);
    run.observations.push_back(std::move(rec));
    run.events.insert(run.events.end(), entries.begin(), entries.end());
    run.active_per_step.push_back(world.active_count());
  };

  record_step(seed_world(world, cfg, placer, rng));
  while (world.step < cfg.horizon_steps) record_step(step_world(world, cfg, mover, placer, rng));

  run.paths = all_paths(world);
  for (const auto& a : world.agents) run.groups.push_back(a.group);
  run.archive = completed_paths(world);
  run.od = build_od(run.paths, cfg.store_count);
  run.agents_spawned = world.agents_spawned;
  run.spawned_per_group.assign(cfg.group_count, 0);
  for (const auto& a : world.agents) ++run.spawned_per_group[a.group];
  return run;
}

// ---------------------------------------------------------------------------
// Biased sequence sample

struct PoolEntry {
  Path path;
  GroupId attr = 0;
  friend bool operator==(const PoolEntry&, const PoolEntry&) = default;
};

struct SequencePool {
  std::vector<PoolEntry> entries;
  std::vector<double> sampling_ratios = {0.4, 0.25, 0.2, 0.15};
  std::size_t pool_size = 400;

  std::size_t size() const noexcept { return entries.size(); }
};

/// Draws `pool_size` archived paths. Each entry's group is drawn from
/// `ratios`; within a group, paths are taken uniformly without replacement
/// until the group is exhausted and with replacement afterwards.
inline SequencePool sample_biased_pool(std::span<const ArchivedPath> archive, std::span<const double> ratios,
                                       std::size_t pool_size, Rng& rng) {
  const std::size_t groups = ratios.size();
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw std::invalid_argument("pool ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("pool ratios must sum to 1");

  std::vector<std::vector<std::size_t>> by_group(groups);
  for (std::size_t i = 0; i < archive.size(); ++i) {
    if (archive[i].group >= groups) throw std::invalid_argument("archived path has a group without a ratio");
    by_group[archive[i].group].push_back(i);
  }
  for (std::size_t g = 0; g < groups; ++g)
    if (ratios[g] > 0.0 && by_group[g].empty())
      throw std::invalid_argument("no archived paths for group " + std::to_string(g) +
                                  " but its sampling ratio is positive");
  for (auto& idx : by_group) std::shuffle(idx.begin(), idx.end(), rng);

  SequencePool pool;
  pool.sampling_ratios.assign(ratios.begin(), ratios.end());
  pool.pool_size = pool_size;
  pool.entries.reserve(pool_size);
  std::vector<std::size_t> taken(groups, 0);
  for (std::size_t n = 0; n < pool_size; ++n) {
    const GroupId g = sample_categorical(ratios, rng);
    const auto& idx = by_group[g];
    const std::size_t pick = taken[g] < idx.size() ? idx[taken[g]++] : idx[uniform_index(rng, idx.size())];
    pool.entries.push_back({archive[pick].path, g});
  }
  return pool;
}

}  // namespace flowda
