#pragma once

// Roaming agent model: store graph, store-choice probabilities and the agent
// lifecycle (spawn, dwell, move, stop, replenish).

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowda/grid.hpp"
#include "flowda/log_math.hpp"
#include "flowda/random.hpp"

namespace flowda {

using StoreId = std::size_t;
using GroupId = std::size_t;
using AgentId = std::size_t;
using Path = std::vector<StoreId>;

struct StoreGraph {
  std::size_t store_count = 0;
  Grid<double> distance;        // store x store
  Grid<double> attractiveness;  // group x store

  std::size_t group_count() const noexcept { return attractiveness.rows(); }

  void validate() const {
    if (store_count < 2) throw std::invalid_argument("store_count must be >= 2");
    if (distance.rows() != store_count || distance.cols() != store_count)
      throw std::invalid_argument("distance matrix must be store_count x store_count");
    for (std::size_t a = 0; a < store_count; ++a) {
      if (distance(a, a) != 0.0) throw std::invalid_argument("distance diagonal must be zero");
      for (std::size_t b = 0; b < store_count; ++b) {
        const double d = distance(a, b);
        if (!std::isfinite(d) || d < 0.0)
          throw std::invalid_argument("distance entries must be finite and non-negative");
        if (d != distance(b, a)) throw std::invalid_argument("distance matrix must be symmetric");
      }
    }
    if (attractiveness.rows() == 0 || attractiveness.cols() != store_count)
      throw std::invalid_argument("attractiveness must be group_count x store_count");
    for (double a : attractiveness.flat())
      if (!std::isfinite(a) || a <= 0.0)
        throw std::invalid_argument("attractiveness entries must be finite and > 0");
  }
};

/// Complete graph with every off-diagonal distance equal to one.
inline Grid<double> unit_distance(std::size_t stores) {
  Grid<double> d(stores, stores, 1.0);
  for (std::size_t i = 0; i < stores; ++i) d(i, i) = 0.0;
  return d;
}

inline Grid<double> uniform_attractiveness(std::size_t groups, std::size_t stores, double value = 5.0) {
  return Grid<double>(groups, stores, value);
}

/// Ground-truth table: group g favours stores 3g..3g+2 with values 7.5, 8,
/// 8.5 and 10 for the four groups; every other entry is 5.
inline Grid<double> truth_attractiveness(std::size_t groups, std::size_t stores) {
  static constexpr double kBoost[] = {7.5, 8.0, 8.5, 10.0};
  Grid<double> a(groups, stores, 5.0);
  for (std::size_t g = 0; g < groups && g < std::size(kBoost); ++g)
    for (std::size_t s = 3 * g; s < 3 * g + 3 && s < stores; ++s) a(g, s) = kBoost[g];
  return a;
}

struct BehaviorParams {
  double omega = 0.005;  // congestion sensitivity
  double k = 1.0;        // utility scale
  double lambda = 6.0;   // distance decay

  void validate() const {
    if (!std::isfinite(omega)) throw std::invalid_argument("omega must be finite");
    if (!std::isfinite(k)) throw std::invalid_argument("k must be finite");
    if (!std::isfinite(lambda) || lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
  }
  friend bool operator==(const BehaviorParams&, const BehaviorParams&) = default;
};

enum class AgentStatus : std::uint8_t { active, stationary };

struct AgentState {
  AgentId id = 0;
  GroupId group = 0;
  StoreId current_store = 0;
  int dwell_remaining = 0;
  int transitions_made = 0;
  Path path;
  AgentStatus status = AgentStatus::active;
  // Set when the agent follows a prescribed store sequence.
  Path plan;
  std::optional<std::size_t> sequence_id;

  bool active() const noexcept { return status == AgentStatus::active; }
};

struct SimConfig {
  std::size_t store_count = 18;
  std::size_t total_agents = 2000;
  std::size_t initial_agents = 100;
  std::size_t replenish_threshold = 40;
  std::size_t replenish_count = 40;
  int max_transitions = 3;
  int dwell_min = 2;
  int dwell_max = 3;
  std::size_t horizon_steps = 200;
  std::size_t group_count = 4;
  std::vector<std::size_t> group_quotas = {500, 500, 500, 500};
  std::vector<BehaviorParams> behavior = std::vector<BehaviorParams>(4);
  StoreGraph graph{18, unit_distance(18), truth_attractiveness(4, 18)};
  bool allow_self_transition = false;
  std::uint64_t rng_seed = 0;

  const BehaviorParams& params_for(GroupId g) const {
    return behavior.size() == 1 ? behavior.front() : behavior.at(g);
  }

  void validate() const {
    if (graph.store_count != store_count)
      throw std::invalid_argument("graph store_count differs from store_count");
    graph.validate();
    if (graph.group_count() != group_count)
      throw std::invalid_argument("attractiveness rows differ from group_count");
    if (group_count == 0) throw std::invalid_argument("group_count must be >= 1");
    if (group_quotas.size() != group_count)
      throw std::invalid_argument("group_quotas must have group_count entries");
    std::size_t quota_sum = 0;
    for (auto q : group_quotas) quota_sum += q;
    if (quota_sum != total_agents)
      throw std::invalid_argument("sum(group_quotas) = " + std::to_string(quota_sum) +
                                  " differs from total_agents = " + std::to_string(total_agents));
    if (initial_agents > total_agents) throw std::invalid_argument("initial_agents exceeds total_agents");
    if (dwell_min < 1 || dwell_min > dwell_max)
      throw std::invalid_argument("dwell_min must satisfy 1 <= dwell_min <= dwell_max");
    if (max_transitions < 1) throw std::invalid_argument("max_transitions must be >= 1");
    if (horizon_steps < 1) throw std::invalid_argument("horizon_steps must be >= 1");
    if (replenish_threshold < 1) throw std::invalid_argument("replenish_threshold must be >= 1");
    if (behavior.size() != 1 && behavior.size() != group_count)
      throw std::invalid_argument("behavior params must be shared or given per group");
    for (const auto& b : behavior) b.validate();
  }
};

struct WorldState {
  std::size_t step = 0;
  std::vector<AgentState> agents;  // indexed by agent id
  std::vector<int> occupancy;      // active agents per store
  std::size_t agents_spawned = 0;
  std::vector<std::size_t> group_quota_remaining;
  std::size_t stationary_pending = 0;  // stationary agents not yet retired by a replenishment

  std::size_t active_count() const {
    return static_cast<std::size_t>(
        std::count_if(agents.begin(), agents.end(), [](const AgentState& a) { return a.active(); }));
  }
};

/// One agent entering a store, either by spawning there or by moving.
struct Entry {
  std::size_t step = 0;
  AgentId agent = 0;
  GroupId group = 0;
  StoreId store = 0;
  bool spawn = false;
  friend bool operator==(const Entry&, const Entry&) = default;
};

// ---------------------------------------------------------------------------
// Choice model

struct ChoiceDistribution {
  std::vector<StoreId> stores;
  std::vector<double> probabilities;
};

namespace detail {

inline double attraction_utility(const StoreGraph& graph, GroupId group, StoreId j, double lambda) {
  double u = graph.attractiveness(group, j);
  for (StoreId o = 0; o < graph.store_count; ++o) {
    if (o == j) continue;
    u += graph.attractiveness(group, o) / std::pow(1.0 + graph.distance(j, o), lambda);
  }
  return u;
}

inline ChoiceDistribution softmax_over_candidates(std::vector<StoreId> stores, std::vector<double> logits) {
  if (stores.empty()) throw std::invalid_argument("choice model: empty candidate set");
  for (double l : logits)
    if (!std::isfinite(l)) throw std::domain_error("choice model: non-finite utility");
  return {std::move(stores), softmax(logits)};
}

}  // namespace detail

/// Probability of the agent moving to each candidate store:
///   P(j) ∝ exp(k * (A_j + sum_{j' != j} A_j' / (1 + d_jj')^lambda) + omega * occupancy_j)
/// The candidate set excludes the agent's current store unless `allow_self`.
inline ChoiceDistribution choice_probabilities(const WorldState& world, const StoreGraph& graph,
                                               const BehaviorParams& params, const AgentState& agent,
                                               bool allow_self = false) {
  std::vector<StoreId> stores;
  std::vector<double> logits;
  for (StoreId j = 0; j < graph.store_count; ++j) {
    if (!allow_self && j == agent.current_store) continue;
    const double rho = j < world.occupancy.size() ? world.occupancy[j] : 0.0;
    stores.push_back(j);
    logits.push_back(params.k * detail::attraction_utility(graph, agent.group, j, params.lambda) +
                     params.omega * rho);
  }
  return detail::softmax_over_candidates(std::move(stores), std::move(logits));
}

/// Same distribution as choice_probabilities with the occupancy-independent
/// part of each utility cached per group.
class ChoiceModel {
 public:
  ChoiceModel(const StoreGraph& graph, std::vector<BehaviorParams> params, bool allow_self)
      : stores_(graph.store_count), params_(std::move(params)), allow_self_(allow_self),
        static_(graph.group_count(), graph.store_count) {
    for (GroupId g = 0; g < graph.group_count(); ++g) {
      const auto& p = param(g);
      for (StoreId j = 0; j < stores_; ++j)
        static_(g, j) = p.k * detail::attraction_utility(graph, g, j, p.lambda);
    }
  }

  explicit ChoiceModel(const SimConfig& cfg)
      : ChoiceModel(cfg.graph, cfg.behavior, cfg.allow_self_transition) {}

  ChoiceDistribution operator()(std::span<const int> occupancy, GroupId group, StoreId current) const {
    const double omega = param(group).omega;
    std::vector<StoreId> stores;
    std::vector<double> logits;
    stores.reserve(stores_);
    logits.reserve(stores_);
    for (StoreId j = 0; j < stores_; ++j) {
      if (!allow_self_ && j == current) continue;
      stores.push_back(j);
      logits.push_back(static_(group, j) + omega * (j < occupancy.size() ? occupancy[j] : 0));
    }
    return detail::softmax_over_candidates(std::move(stores), std::move(logits));
  }

  ChoiceDistribution operator()(const WorldState& world, const AgentState& agent) const {
    return (*this)(world.occupancy, agent.group, agent.current_store);
  }

  std::size_t store_count() const noexcept { return stores_; }

 private:
  const BehaviorParams& param(GroupId g) const {
    return params_.size() == 1 ? params_.front() : params_.at(g);
  }

  std::size_t stores_;
  std::vector<BehaviorParams> params_;
  bool allow_self_;
  Grid<double> static_;
};

// ---------------------------------------------------------------------------
// Lifecycle

/// Where a newly spawned agent starts; `plan` (if non-empty) is the full store
/// sequence the agent will follow, beginning with `store`.
struct Placement {
  StoreId store = 0;
  Path plan;
  std::optional<std::size_t> sequence_id;
};

template <class F>
concept MovePolicy = requires(F f, const WorldState& w, const AgentState& a, Rng& r) {
  { f(w, a, r) } -> std::convertible_to<StoreId>;
};

template <class F>
concept PlacePolicy = requires(F f, const WorldState& w, GroupId g, Rng& r) {
  { f(w, g, r) } -> std::convertible_to<Placement>;
};

/// Baseline mover: one draw from the choice model.
struct ModelMover {
  const ChoiceModel* model;
  StoreId operator()(const WorldState& w, const AgentState& a, Rng& rng) const {
    const auto dist = (*model)(w, a);
    return dist.stores[sample_categorical(dist.probabilities, rng)];
  }
};

/// Mover for agents with a prescribed plan; falls back to `fallback` otherwise.
template <MovePolicy Fallback>
struct PlanMover {
  Fallback fallback;
  StoreId operator()(const WorldState& w, const AgentState& a, Rng& rng) const {
    const auto next = static_cast<std::size_t>(a.transitions_made) + 1;
    if (next < a.plan.size()) return a.plan[next];
    return fallback(w, a, rng);
  }
};

struct UniformPlacer {
  std::size_t store_count;
  Placement operator()(const WorldState&, GroupId, Rng& rng) const {
    return {uniform_index(rng, store_count), {}, std::nullopt};
  }
};

inline WorldState make_world(const SimConfig& cfg) {
  WorldState w;
  w.occupancy.assign(cfg.store_count, 0);
  w.group_quota_remaining = cfg.group_quotas;
  return w;
}

inline void recompute_occupancy(WorldState& world) {
  std::fill(world.occupancy.begin(), world.occupancy.end(), 0);
  for (const auto& a : world.agents)
    if (a.active()) ++world.occupancy.at(a.current_store);
}

/// Spawns up to `count` agents, bounded by total_agents and the remaining
/// group quotas. Each agent's group is uniform over groups with quota left.
template <PlacePolicy Placer>
std::vector<Entry> spawn_agents(WorldState& world, const SimConfig& cfg, std::size_t count, Placer&& placer,
                                Rng& rng) {
  std::vector<Entry> entries;
  std::vector<GroupId> open;
  for (std::size_t n = 0; n < count && world.agents_spawned < cfg.total_agents; ++n) {
    open.clear();
    for (GroupId g = 0; g < world.group_quota_remaining.size(); ++g)
      if (world.group_quota_remaining[g] > 0) open.push_back(g);
    if (open.empty()) break;
    const GroupId group = open[uniform_index(rng, open.size())];

    Placement place = placer(std::as_const(world), group, rng);
    if (place.store >= cfg.store_count) throw std::out_of_range("placer returned an invalid store");
    AgentState agent;
    agent.id = world.agents.size();
    agent.group = group;
    agent.current_store = place.store;
    agent.dwell_remaining = uniform_int(rng, cfg.dwell_min, cfg.dwell_max);
    agent.path = {place.store};
    agent.plan = std::move(place.plan);
    agent.sequence_id = place.sequence_id;

    --world.group_quota_remaining[group];
    ++world.agents_spawned;
    entries.push_back({world.step, agent.id, group, place.store, true});
    world.agents.push_back(std::move(agent));
  }
  recompute_occupancy(world);
  return entries;
}

/// Spawns the initial population at step 0.
template <PlacePolicy Placer>
std::vector<Entry> seed_world(WorldState& world, const SimConfig& cfg, Placer&& placer, Rng& rng) {
  return spawn_agents(world, cfg, cfg.initial_agents, placer, rng);
}

/// Retires batches of `replenish_threshold` stationary agents and spawns
/// replacements while agents remain to be introduced.
template <PlacePolicy Placer>
std::vector<Entry> replenish(WorldState& world, const SimConfig& cfg, Placer&& placer, Rng& rng) {
  std::vector<Entry> entries;
  while (world.stationary_pending >= cfg.replenish_threshold && world.agents_spawned < cfg.total_agents) {
    world.stationary_pending -= cfg.replenish_threshold;
    auto batch = spawn_agents(world, cfg, cfg.replenish_count, placer, rng);
    if (batch.empty()) break;
    entries.insert(entries.end(), batch.begin(), batch.end());
  }
  return entries;
}

/// Advances the world by one step. Agents are processed in id order against
/// the occupancy snapshot taken at the start of the step; replenishment runs
/// after all moves. Returns every store entry that happened during the step.
template <MovePolicy Mover, PlacePolicy Placer>
std::vector<Entry> step_world(WorldState& world, const SimConfig& cfg, Mover&& mover, Placer&& placer,
                              Rng& rng) {
  if (world.step >= cfg.horizon_steps) throw std::logic_error("step_world: horizon reached");
  ++world.step;
  std::vector<Entry> entries;
  const WorldState& view = world;
  for (std::size_t i = 0; i < world.agents.size(); ++i) {
    if (!world.agents[i].active()) continue;
    if (--world.agents[i].dwell_remaining > 0) continue;

    const StoreId next = mover(view, std::as_const(world.agents[i]), rng);
    if (next >= cfg.store_count) throw std::out_of_range("mover returned an invalid store");
    auto& agent = world.agents[i];
    agent.current_store = next;
    agent.path.push_back(next);
    ++agent.transitions_made;
    entries.push_back({world.step, agent.id, agent.group, next, false});
    if (agent.transitions_made >= cfg.max_transitions) {
      agent.status = AgentStatus::stationary;
      agent.dwell_remaining = 0;
      ++world.stationary_pending;
    } else {
      agent.dwell_remaining = uniform_int(rng, cfg.dwell_min, cfg.dwell_max);
    }
  }
  recompute_occupancy(world);
  auto spawned = replenish(world, cfg, placer, rng);
  entries.insert(entries.end(), spawned.begin(), spawned.end());
  return entries;
}

inline std::vector<Path> all_paths(const WorldState& world) {
  std::vector<Path> out;
  out.reserve(world.agents.size());
  for (const auto& a : world.agents) out.push_back(a.path);
  return out;
}

}  // namespace flowda
