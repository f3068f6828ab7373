#pragma once

// Particle-filter assimilation of inflow observations into the roaming model.
//
// Store weights are exp(inflow) per store (optionally per attribute), kept in
// log form. Moving agents propose candidate next stores from the choice
// model, weight them by the store weights and select one by a categorical
// draw. New agents are placed by the same store weights, or, with a sequence
// pool, are handed a whole measured store sequence whose weight is the sum of
// the store weights it passes through.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowda/grid.hpp"
#include "flowda/log_math.hpp"
#include "flowda/metrics.hpp"
#include "flowda/model.hpp"
#include "flowda/random.hpp"
#include "flowda/twin.hpp"

namespace flowda {

enum class AssimilationCase : int {
  counts = 1,           // per-store inflow counts
  attribute_counts = 2, // inflow counts split by attribute
  sequences = 3,        // counts plus a biased sample of measured sequences
};

inline std::string case_label(AssimilationCase c) { return "case" + std::to_string(static_cast<int>(c)); }

/// Log store weights at one step: one row when pooled, one row per attribute otherwise.
struct StoreWeightVector {
  std::size_t step = 0;
  Grid<double> log_w;

  std::size_t rows() const noexcept { return log_w.rows(); }
  bool by_attribute() const noexcept { return log_w.rows() > 1; }

  std::span<const double> row_for(GroupId group) const { return log_w.row(by_attribute() ? group : 0); }

  std::vector<double> normalized(GroupId group = 0) const { return softmax(row_for(group)); }

  static StoreWeightVector uniform(std::size_t stores, std::size_t rows = 1) {
    return {0, Grid<double>(rows, stores, -std::log(static_cast<double>(stores)))};
  }
};

/// Multiplies the weights by exp(inflow) (log: adds inflow). With
/// `accumulate` the previous weights carry over; otherwise each step starts
/// from a uniform base. Each row is renormalized.
inline StoreWeightVector update_store_weights(const StoreWeightVector& prev, const ObservationRecord& obs,
                                              bool accumulate, bool by_attribute = false) {
  const std::size_t stores = obs.inflow.size();
  const std::size_t rows = by_attribute ? obs.inflow_by_attr.rows() : 1;
  StoreWeightVector next{obs.step, Grid<double>(rows, stores, 0.0)};
  if (accumulate && !(prev.log_w.rows() == rows && prev.log_w.cols() == stores))
    throw std::invalid_argument("update_store_weights: previous weights have a different shape");
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = next.log_w.row(r);
    for (std::size_t j = 0; j < stores; ++j) {
      const auto count = by_attribute ? obs.inflow_by_attr(r, j) : obs.inflow[j];
      row[j] = (accumulate ? prev.log_w(r, j) : 0.0) + static_cast<double>(count);
    }
    normalize_log_weights(row);
  }
  return next;
}

enum class ParticleKind : std::uint8_t { next_store, sequence };

struct ParticleSet {
  ParticleKind kind = ParticleKind::next_store;
  std::vector<std::size_t> candidates;  // store ids or pool entry ids
  std::vector<double> log_weights;

  std::size_t size() const noexcept { return candidates.size(); }

  void normalize() { normalize_log_weights(log_weights); }

  std::vector<double> weights() const { return softmax(log_weights); }
};

/// N candidate next stores drawn independently from the choice model, all
/// with equal (zero) log weight.
inline ParticleSet propose_particles(const AgentState& agent, const WorldState& world, const ChoiceModel& model,
                                     std::size_t n, Rng& rng) {
  const auto dist = model(world, agent);
  const CategoricalSampler draw(dist.probabilities);
  ParticleSet ps{ParticleKind::next_store, {}, std::vector<double>(n, 0.0)};
  ps.candidates.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ps.candidates.push_back(dist.stores[draw(rng)]);
  return ps;
}

/// Likelihood weighting: adds the log store weight of each particle's
/// candidate (row of `group` when weights are per attribute), then normalizes.
inline ParticleSet weight_particles(ParticleSet ps, const StoreWeightVector& sw, GroupId group = 0) {
  if (ps.kind != ParticleKind::next_store) throw std::invalid_argument("weight_particles: expects next-store particles");
  const auto row = sw.row_for(group);
  for (std::size_t i = 0; i < ps.size(); ++i) ps.log_weights[i] += row[ps.candidates.at(i)];
  ps.normalize();
  return ps;
}

/// Index of the particle chosen for the agent. The default is a single
/// categorical draw on the weights; `explicit_resample` first resamples the
/// whole set multinomially and then picks one resampled particle uniformly.
inline std::size_t select_particle(const ParticleSet& ps, Rng& rng, bool explicit_resample = false) {
  if (ps.size() == 0) throw std::invalid_argument("select_particle: empty particle set");
  for (double lw : ps.log_weights)
    if (std::isnan(lw) || lw == std::numeric_limits<double>::infinity())
      throw std::domain_error("select_particle: non-finite weight");
  const double lse = log_sum_exp(ps.log_weights);
  if (!std::isfinite(lse)) throw std::domain_error("select_particle: all weights are zero");
  const auto w = ps.weights();
  const CategoricalSampler draw(w);
  if (!explicit_resample) return draw(rng);
  std::vector<std::size_t> resampled(ps.size());
  for (auto& r : resampled) r = draw(rng);
  return resampled[uniform_index(rng, resampled.size())];
}

inline StoreId resample_and_select(const ParticleSet& ps, Rng& rng, bool explicit_resample = false) {
  return ps.candidates[select_particle(ps, rng, explicit_resample)];
}

/// Initial store for a new agent, drawn from the normalized store weights.
inline StoreId place_new_agent(const StoreWeightVector& sw, Rng& rng, GroupId group = 0) {
  return sample_categorical(sw.normalized(group), rng);
}

/// Sequence weights: sum of the normalized store weights along each pooled
/// path (repeats counted), normalized across the pool.
inline ParticleSet weight_sequences(const SequencePool& pool, const StoreWeightVector& sw) {
  if (pool.entries.empty()) throw std::invalid_argument("weight_sequences: empty pool");
  const auto store_w = sw.normalized(0);
  ParticleSet ps{ParticleKind::sequence, {}, {}};
  ps.candidates.reserve(pool.size());
  ps.log_weights.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    double raw = 0.0;
    for (StoreId s : pool.entries[i].path) raw += store_w.at(s);
    ps.candidates.push_back(i);
    ps.log_weights.push_back(std::log(raw));
  }
  ps.normalize();
  return ps;
}

/// Pool entry handed to a new agent: weighted draw, or uniform under `random_baseline`.
inline std::size_t assign_sequence(const ParticleSet& ps, Rng& rng, bool random_baseline = false) {
  if (ps.kind != ParticleKind::sequence) throw std::invalid_argument("assign_sequence: expects sequence particles");
  if (random_baseline) return ps.candidates[uniform_index(rng, ps.size())];
  return ps.candidates[select_particle(ps, rng)];
}

// ---------------------------------------------------------------------------
// Whole runs

struct AssimilationOptions {
  std::size_t particles = 100;       // next-store particles per move (cases 1-2)
  bool weight_accumulation = false;  // carry store weights across steps
  bool explicit_resample = false;
  bool random_baseline = false;      // case 3: uniform sequence assignment
  bool filter_moves = true;          // per-agent particle filtering of moves (cases 1-2)
  bool weighted_placement = true;    // place new agents by store weights (cases 1-2)
};

struct SimulationResult {
  std::vector<Path> paths;
  std::vector<GroupId> groups;
  std::vector<std::optional<std::size_t>> sequence_ids;  // case 3 only
  ODMatrix od;
  std::size_t agents_spawned = 0;

  /// Fraction of assigned sequences drawn from each attribute.
  std::vector<double> assigned_composition(const SequencePool& pool, std::size_t groups_n) const {
    std::vector<double> c(groups_n, 0.0);
    double n = 0.0;
    for (const auto& id : sequence_ids) {
      if (!id) continue;
      c.at(pool.entries.at(*id).attr) += 1.0;
      n += 1.0;
    }
    if (n > 0.0)
      for (double& v : c) v /= n;
    return c;
  }
};

namespace detail {

inline SimulationResult collect(const WorldState& world, std::size_t stores) {
  SimulationResult r;
  r.paths = all_paths(world);
  for (const auto& a : world.agents) {
    r.groups.push_back(a.group);
    r.sequence_ids.push_back(a.sequence_id);
  }
  r.od = build_od(r.paths, stores);
  r.agents_spawned = world.agents_spawned;
  return r;
}

}  // namespace detail

/// Unassimilated run of the model: plain choice-model moves, uniform placement.
inline SimulationResult run_baseline(const SimConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.rng_seed);
  const ChoiceModel model(cfg);
  const ModelMover mover{&model};
  const UniformPlacer placer{cfg.store_count};
  auto world = make_world(cfg);
  seed_world(world, cfg, placer, rng);
  while (world.step < cfg.horizon_steps) step_world(world, cfg, mover, placer, rng);
  return detail::collect(world, cfg.store_count);
}

/// Runs the assimilation world against an observation series aligned with
/// its clock: the weights used during step t come from observations[t].
inline SimulationResult run_assimilation(const SimConfig& cfg, std::span<const ObservationRecord> observations,
                                         AssimilationCase which, const SequencePool* pool = nullptr,
                                         const AssimilationOptions& opt = {}) {
  cfg.validate();
  if (observations.size() < cfg.horizon_steps + 1)
    throw std::invalid_argument("run_assimilation: need " + std::to_string(cfg.horizon_steps + 1) +
                                " observation records, got " + std::to_string(observations.size()));
  for (std::size_t t = 0; t < observations.size(); ++t) {
    const auto& o = observations[t];
    if (o.step != t || o.inflow.size() != cfg.store_count || o.inflow_by_attr.rows() != cfg.group_count)
      throw std::invalid_argument("run_assimilation: observation record " + std::to_string(t) +
                                  " is misaligned or has the wrong shape");
  }
  const bool sequences = which == AssimilationCase::sequences;
  if (sequences) {
    if (pool == nullptr || pool->entries.empty())
      throw std::invalid_argument("run_assimilation: the sequence case requires a non-empty pool");
    for (const auto& e : pool->entries)
      if (e.path.size() != static_cast<std::size_t>(cfg.max_transitions) + 1)
        throw std::invalid_argument("run_assimilation: pooled paths must have max_transitions + 1 stores");
  }
  const bool by_attr = which == AssimilationCase::attribute_counts;

  Rng rng(cfg.rng_seed);
  const ChoiceModel model(cfg);
  auto sw = StoreWeightVector::uniform(cfg.store_count, by_attr ? cfg.group_count : 1);
  auto advance_weights = [&](std::size_t t) { sw = update_store_weights(sw, observations[t], opt.weight_accumulation, by_attr); };

  const ModelMover plain{&model};
  auto filtered_mover = [&](const WorldState& w, const AgentState& a, Rng& r) -> StoreId {
    if (!opt.filter_moves) return plain(w, a, r);
    auto ps = propose_particles(a, w, model, opt.particles, r);
    ps = weight_particles(std::move(ps), sw, a.group);
    return resample_and_select(ps, r, opt.explicit_resample);
  };
  const PlanMover<ModelMover> sequence_mover{plain};

  auto weighted_placer = [&](const WorldState&, GroupId g, Rng& r) -> Placement {
    if (!opt.weighted_placement) return {uniform_index(r, cfg.store_count), {}, std::nullopt};
    return {place_new_agent(sw, r, g), {}, std::nullopt};
  };
  std::optional<ParticleSet> seq_weights;
  std::size_t seq_weights_step = 0;
  auto sequence_placer = [&](const WorldState&, GroupId, Rng& r) -> Placement {
    if (!seq_weights || seq_weights_step != sw.step) {
      seq_weights = weight_sequences(*pool, sw);
      seq_weights_step = sw.step;
    }
    const std::size_t id = assign_sequence(*seq_weights, r, opt.random_baseline);
    const auto& path = pool->entries[id].path;
    return {path.front(), path, id};
  };

  auto world = make_world(cfg);
  advance_weights(0);
  if (sequences) {
    seed_world(world, cfg, sequence_placer, rng);
    while (world.step < cfg.horizon_steps) {
      advance_weights(world.step + 1);
      step_world(world, cfg, sequence_mover, sequence_placer, rng);
    }
  } else {
    seed_world(world, cfg, weighted_placer, rng);
    while (world.step < cfg.horizon_steps) {
      advance_weights(world.step + 1);
      step_world(world, cfg, filtered_mover, weighted_placer, rng);
    }
  }
  return detail::collect(world, cfg.store_count);
}

}  // namespace flowda
