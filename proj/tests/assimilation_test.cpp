#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "flowda/assimilation.hpp"
#include "stat_oracles.hpp"

namespace flowda {
namespace {

constexpr std::size_t kDraws = 100000;

ObservationRecord record(std::size_t step, std::vector<std::int64_t> inflow, std::size_t groups = 1) {
  ObservationRecord r(step, groups, inflow.size());
  for (std::size_t j = 0; j < inflow.size(); ++j) {
    r.inflow[j] = inflow[j];
    r.inflow_by_attr(0, j) = inflow[j];
  }
  return r;
}

StoreWeightVector weights_from_linear(std::vector<double> w) {
  StoreWeightVector sw{0, Grid<double>(1, w.size())};
  for (std::size_t j = 0; j < w.size(); ++j) sw.log_w(0, j) = std::log(w[j]);
  return sw;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

// --- store weights ---------------------------------------------------------

TEST(UpdateStoreWeights, ZeroInflowGivesUniformWeights) {
  const auto sw = update_store_weights(StoreWeightVector::uniform(18), record(1, std::vector<std::int64_t>(18, 0)), false);
  for (double w : sw.normalized()) EXPECT_NEAR(w, 1.0 / 18.0, 1e-15);
}

TEST(UpdateStoreWeights, FreshModeIsSoftmaxOfInflow) {
  // Oracle: direct softmax of [2, 1, 0].
  const auto sw = update_store_weights(StoreWeightVector::uniform(3), record(1, {2, 1, 0}), false);
  const auto w = sw.normalized();
  EXPECT_NEAR(w[0], 0.6652, 1e-4);
  EXPECT_NEAR(w[1], 0.2447, 1e-4);
  EXPECT_NEAR(w[2], 0.0900, 1e-4);
  EXPECT_EQ(sw.step, 1u);
}

TEST(UpdateStoreWeights, AccumulationMultipliesByExpInflow) {
  // w *= exp(inflow): two steps of [1, 0, 0] equal one step of [2, 0, 0].
  auto a = update_store_weights(StoreWeightVector::uniform(3), record(1, {1, 0, 0}), true);
  a = update_store_weights(a, record(2, {1, 0, 0}), true);
  const auto b = update_store_weights(StoreWeightVector::uniform(3), record(1, {2, 0, 0}), false);
  const auto wa = a.normalized(), wb = b.normalized();
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(wa[j], wb[j], 1e-12);
  // Fresh mode forgets the previous step.
  const auto f = update_store_weights(a, record(3, {0, 0, 0}), false);
  for (double w : f.normalized()) EXPECT_NEAR(w, 1.0 / 3.0, 1e-15);
}

TEST(UpdateStoreWeights, LargeInflowsStayFinite) {
  std::vector<std::int64_t> inflow(18, 0);
  inflow[3] = 10000;
  inflow[7] = 9999;
  auto sw = StoreWeightVector::uniform(18);
  for (std::size_t t = 1; t <= 5; ++t) sw = update_store_weights(sw, record(t, inflow), true);
  const auto w = sw.normalized();
  for (double v : w) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(sum(w), 1.0, 1e-9);
  EXPECT_GT(w[3], w[7]);
}

TEST(UpdateStoreWeights, AttributeRowsAreIndependent) {
  ObservationRecord r(1, 2, 3);
  r.add(0, 0);
  r.add(0, 0);
  r.add(1, 2);
  const auto sw = update_store_weights(StoreWeightVector::uniform(3, 2), r, false, true);
  ASSERT_EQ(sw.rows(), 2u);
  const auto w0 = sw.normalized(0), w1 = sw.normalized(1);
  EXPECT_GT(w0[0], w0[2]);
  EXPECT_GT(w1[2], w1[0]);
  EXPECT_NEAR(sum(w0), 1.0, 1e-12);
  EXPECT_NEAR(sum(w1), 1.0, 1e-12);
}

// --- particles -------------------------------------------------------------

SimConfig three_store_config(std::vector<double> a) {
  SimConfig cfg;
  cfg.store_count = 3;
  cfg.group_count = 1;
  cfg.total_agents = 10;
  cfg.initial_agents = 10;
  cfg.group_quotas = {10};
  cfg.behavior = {BehaviorParams{0.0, 1.0, 6.0}};
  cfg.graph = {3, unit_distance(3), Grid<double>(1, 3)};
  for (std::size_t j = 0; j < 3; ++j) cfg.graph.attractiveness(0, j) = a[j];
  return cfg;
}

AgentState agent_at(StoreId s) {
  AgentState a;
  a.current_store = s;
  a.path = {s};
  return a;
}

TEST(ProposeParticles, DeterministicModelGivesIdenticalParticles) {
  // Two stores: the only candidate for an agent at store 0 is store 1.
  SimConfig cfg = three_store_config({5, 5, 5});
  cfg.store_count = 2;
  cfg.graph = {2, unit_distance(2), Grid<double>(1, 2, 5.0)};
  const ChoiceModel model(cfg);
  auto w = make_world(cfg);
  Rng rng(1);
  const auto ps = propose_particles(agent_at(0), w, model, 100, rng);
  ASSERT_EQ(ps.size(), 100u);
  for (auto c : ps.candidates) EXPECT_EQ(c, 1u);
  for (double lw : ps.log_weights) EXPECT_EQ(lw, 0.0);
}

TEST(ProposeParticles, FrequenciesMatchChoiceModel) {
  const SimConfig cfg = three_store_config({5, 6, 5.5});
  const ChoiceModel model(cfg);
  auto w = make_world(cfg);
  Rng rng(2);
  const auto ps = propose_particles(agent_at(2), w, model, kDraws, rng);
  std::vector<double> counts(3, 0.0);
  for (auto c : ps.candidates) counts[c] += 1.0;
  const auto dist = model(w, agent_at(2));
  const std::vector<double> p{dist.probabilities[0], dist.probabilities[1], 0.0};
  EXPECT_EQ(counts[2], 0.0);
  EXPECT_TRUE(testing::within_binomial_sigma(counts, p));
}

TEST(WeightParticles, UniformStoreWeightsLeaveParticlesEqual) {
  ParticleSet ps{ParticleKind::next_store, {0, 4, 4, 9}, std::vector<double>(4, 0.0)};
  ps = weight_particles(ps, StoreWeightVector::uniform(18));
  for (double w : ps.weights()) EXPECT_NEAR(w, 0.25, 1e-15);
}

TEST(WeightParticles, HandComputedWeights) {
  ParticleSet ps{ParticleKind::next_store, {0, 1, 2}, std::vector<double>(3, 0.0)};
  ps = weight_particles(ps, weights_from_linear({0.5, 0.3, 0.2}));
  const auto w = ps.weights();
  EXPECT_NEAR(w[0], 0.5, 1e-12);
  EXPECT_NEAR(w[1], 0.3, 1e-12);
  EXPECT_NEAR(w[2], 0.2, 1e-12);
}

TEST(WeightParticles, SameStoreSameContribution) {
  ParticleSet ps{ParticleKind::next_store, {1, 2, 1}, std::vector<double>(3, 0.0)};
  ps = weight_particles(ps, weights_from_linear({0.5, 0.3, 0.2}));
  EXPECT_DOUBLE_EQ(ps.log_weights[0], ps.log_weights[2]);
}

TEST(WeightParticles, UsesAgentsAttributeRow) {
  StoreWeightVector sw{0, Grid<double>(2, 2)};
  sw.log_w(0, 0) = 0.0;
  sw.log_w(0, 1) = -10.0;
  sw.log_w(1, 0) = -10.0;
  sw.log_w(1, 1) = 0.0;
  ParticleSet ps{ParticleKind::next_store, {0, 1}, {0.0, 0.0}};
  EXPECT_GT(weight_particles(ps, sw, 1).weights()[1], 0.99);
  EXPECT_GT(weight_particles(ps, sw, 0).weights()[0], 0.99);
}

TEST(ResampleAndSelect, SingleParticleAlwaysChosen) {
  ParticleSet ps{ParticleKind::next_store, {7}, {0.0}};
  Rng rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(resample_and_select(ps, rng), 7u);
}

TEST(ResampleAndSelect, FrequenciesMatchWeights) {
  const std::vector<double> w{0.5, 0.3, 0.2};
  ParticleSet ps{ParticleKind::next_store, {0, 1, 2}, {std::log(0.5), std::log(0.3), std::log(0.2)}};
  for (bool explicit_resample : {false, true}) {
    Rng rng(explicit_resample ? 5 : 4);
    const auto counts = testing::tally(3, kDraws, [&] { return resample_and_select(ps, rng, explicit_resample); });
    EXPECT_TRUE(testing::within_binomial_sigma(counts, w)) << explicit_resample;
    EXPECT_GT(testing::chi_square_p(counts, w), 1e-3);
  }
}

TEST(ResampleAndSelect, UniformWeightsUniformSelection) {
  ParticleSet ps{ParticleKind::next_store, {0, 1, 2, 3}, std::vector<double>(4, 0.0)};
  Rng rng(6);
  const auto counts = testing::tally(4, kDraws, [&] { return resample_and_select(ps, rng); });
  EXPECT_TRUE(testing::within_binomial_sigma(counts, std::vector<double>(4, 0.25)));
}

TEST(ResampleAndSelect, RejectsDegenerateWeights) {
  Rng rng(1);
  const double ninf = -std::numeric_limits<double>::infinity();
  ParticleSet zero{ParticleKind::next_store, {0, 1}, {ninf, ninf}};
  EXPECT_THROW(resample_and_select(zero, rng), std::domain_error);
  ParticleSet nan{ParticleKind::next_store, {0, 1}, {0.0, std::nan("")}};
  EXPECT_THROW(resample_and_select(nan, rng), std::domain_error);
}

// --- placement and sequences -----------------------------------------------

TEST(PlaceNewAgent, UniformWeightsUniformPlacement) {
  Rng rng(7);
  const auto sw = StoreWeightVector::uniform(18);
  const auto counts = testing::tally(18, kDraws, [&] { return place_new_agent(sw, rng); });
  EXPECT_GT(testing::chi_square_p(counts, std::vector<double>(18, 1.0 / 18.0)), 1e-3);
}

TEST(PlaceNewAgent, PointMassPlacesEveryone) {
  std::vector<std::int64_t> inflow(18, 0);
  inflow[5] = 1000;
  const auto sw = update_store_weights(StoreWeightVector::uniform(18), record(1, inflow), false);
  Rng rng(8);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(place_new_agent(sw, rng), 5u);
}

TEST(PlaceNewAgent, SoftmaxWeightsMatchFrequencies) {
  const auto sw = update_store_weights(StoreWeightVector::uniform(3), record(1, {2, 1, 0}), false);
  Rng rng(9);
  const auto counts = testing::tally(3, kDraws, [&] { return place_new_agent(sw, rng); });
  EXPECT_TRUE(testing::within_binomial_sigma(counts, {0.6652409557748219, 0.24472847105479764, 0.09003057317038046}));
}

TEST(WeightSequences, UniformStoresGiveEqualSequenceWeights) {
  SequencePool pool;
  pool.entries = {{{0, 1, 2, 3}, 0}, {{4, 5, 6, 7}, 1}, {{9, 3, 9, 3}, 2}};
  const auto ps = weight_sequences(pool, StoreWeightVector::uniform(18));
  for (double w : ps.weights()) EXPECT_NEAR(w, 1.0 / 3.0, 1e-12);
}

TEST(WeightSequences, SumOfStoreWeights) {
  // Raw weights 0.5 + 0.3 = 0.8 and 0.3 + 0.2 = 0.5, normalized by 1.3.
  SequencePool pool;
  pool.entries = {{{0, 1}, 0}, {{1, 2}, 1}};
  const auto w = weight_sequences(pool, weights_from_linear({0.5, 0.3, 0.2})).weights();
  EXPECT_NEAR(w[0], 0.6154, 1e-4);
  EXPECT_NEAR(w[1], 0.3846, 1e-4);
}

TEST(WeightSequences, SumNotProduct) {
  // A product would give 0.5*0.5 = 0.25 vs 0.3*0.2 = 0.06; the sum gives 1.0 vs 0.5.
  SequencePool pool;
  pool.entries = {{{0, 0}, 0}, {{1, 2}, 0}};
  const auto w = weight_sequences(pool, weights_from_linear({0.5, 0.3, 0.2})).weights();
  EXPECT_NEAR(w[0], 1.0 / 1.5, 1e-12);
}

TEST(AssignSequence, SingleEntryPool) {
  SequencePool pool;
  pool.entries = {{{0, 1, 2, 3}, 0}};
  const auto ps = weight_sequences(pool, StoreWeightVector::uniform(18));
  Rng rng(1);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(assign_sequence(ps, rng), 0u);
}

TEST(AssignSequence, RandomBaselineIsUniform) {
  SequencePool pool;
  pool.entries = {{{0, 1}, 0}, {{1, 2}, 1}, {{0, 0}, 0}};
  const auto ps = weight_sequences(pool, weights_from_linear({0.5, 0.3, 0.2}));
  Rng rng(2);
  const auto counts = testing::tally(3, kDraws, [&] { return assign_sequence(ps, rng, true); });
  EXPECT_TRUE(testing::within_binomial_sigma(counts, std::vector<double>(3, 1.0 / 3.0)));
}

TEST(AssignSequence, WeightedDrawMatchesSequenceWeights) {
  SequencePool pool;
  pool.entries = {{{0, 1}, 0}, {{1, 2}, 1}, {{0, 0}, 0}};
  const auto ps = weight_sequences(pool, weights_from_linear({0.5, 0.3, 0.2}));
  Rng rng(3);
  const auto counts = testing::tally(3, kDraws, [&] { return assign_sequence(ps, rng); });
  EXPECT_TRUE(testing::within_binomial_sigma(counts, {0.8 / 2.3, 0.5 / 2.3, 1.0 / 2.3}));
}

// --- whole runs ------------------------------------------------------------

ObservationSeries uniform_series(std::size_t horizon, std::size_t groups, std::size_t stores, std::int64_t count) {
  ObservationSeries s;
  for (std::size_t t = 0; t <= horizon; ++t) {
    ObservationRecord r(t, groups, stores);
    for (std::size_t j = 0; j < stores; ++j) {
      r.inflow[j] = count * static_cast<std::int64_t>(groups);
      for (std::size_t g = 0; g < groups; ++g) r.inflow_by_attr(g, j) = count;
    }
    s.push_back(std::move(r));
  }
  return s;
}

TEST(RunAssimilation, UniformObservationsKeepTheModelKernel) {
  // With uniform observations the filtered move distribution is the model's own.
  const SimConfig cfg = three_store_config({5, 7, 6});
  const ChoiceModel model(cfg);
  const auto obs = uniform_series(1, 1, 3, 4);
  StoreWeightVector sw = update_store_weights(StoreWeightVector::uniform(3), obs[1], false);
  auto w = make_world(cfg);
  Rng rng(10);
  const auto agent = agent_at(0);
  std::vector<double> counts(3, 0.0);
  for (std::size_t i = 0; i < kDraws; ++i) {
    auto ps = weight_particles(propose_particles(agent, w, model, 100, rng), sw);
    counts[resample_and_select(ps, rng)] += 1.0;
  }
  const auto d = model(w, agent);
  const std::vector<double> p{0.0, d.probabilities[0], d.probabilities[1]};
  EXPECT_GT(testing::chi_square_p(counts, p), 1e-3);
}

TEST(RunAssimilation, SequenceCaseRequiresPool) {
  SimConfig cfg;
  cfg.graph.attractiveness = uniform_attractiveness(4, 18);
  const auto obs = uniform_series(200, 4, 18, 0);
  EXPECT_THROW(run_assimilation(cfg, obs, AssimilationCase::sequences), std::invalid_argument);
}

TEST(RunAssimilation, RejectsMisalignedObservations) {
  SimConfig cfg;
  cfg.graph.attractiveness = uniform_attractiveness(4, 18);
  auto obs = uniform_series(150, 4, 18, 0);
  EXPECT_THROW(run_assimilation(cfg, obs, AssimilationCase::counts), std::invalid_argument);
}

class AssimilationRunTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SimConfig t;
    t.rng_seed = 77;
    truth_ = new TruthRun(run_truth(t));
    Rng rng(78);
    pool_ = new SequencePool(sample_biased_pool(truth_->archive, std::vector<double>{0.4, 0.25, 0.2, 0.15}, 400, rng));
  }
  static void TearDownTestSuite() {
    delete truth_;
    delete pool_;
  }
  static SimConfig assim_config(std::uint64_t seed) {
    SimConfig a;
    a.graph.attractiveness = uniform_attractiveness(4, 18);
    a.rng_seed = seed;
    return a;
  }
  static TruthRun* truth_;
  static SequencePool* pool_;
};

TruthRun* AssimilationRunTest::truth_ = nullptr;
SequencePool* AssimilationRunTest::pool_ = nullptr;

TEST_F(AssimilationRunTest, SequenceAgentsFollowPooledPaths) {
  const auto res = run_assimilation(assim_config(3), truth_->observations, AssimilationCase::sequences, pool_);
  std::set<Path> pooled;
  for (const auto& e : pool_->entries) pooled.insert(e.path);
  ASSERT_EQ(res.paths.size(), res.sequence_ids.size());
  for (std::size_t i = 0; i < res.paths.size(); ++i) {
    ASSERT_TRUE(res.sequence_ids[i].has_value());
    const auto& planned = pool_->entries[*res.sequence_ids[i]].path;
    ASSERT_LE(res.paths[i].size(), planned.size());
    EXPECT_TRUE(std::equal(res.paths[i].begin(), res.paths[i].end(), planned.begin()));
    if (res.paths[i].size() == 4) {
      EXPECT_TRUE(pooled.contains(res.paths[i]));
    }
  }
}

TEST_F(AssimilationRunTest, AttributeCaseKeepsLifecycleAccounting) {
  const auto res = run_assimilation(assim_config(4), truth_->observations, AssimilationCase::attribute_counts);
  EXPECT_EQ(res.agents_spawned, 2000u);
  std::int64_t transitions = 0;
  for (const auto& p : res.paths) transitions += static_cast<std::int64_t>(p.size()) - 1;
  EXPECT_EQ(total(res.od), transitions);
  for (std::size_t s = 0; s < 18; ++s) EXPECT_EQ(res.od(s, s), 0);
}

TEST_F(AssimilationRunTest, DeterministicForFixedSeed) {
  for (auto c : {AssimilationCase::counts, AssimilationCase::attribute_counts, AssimilationCase::sequences}) {
    const auto a = run_assimilation(assim_config(5), truth_->observations, c, pool_);
    const auto b = run_assimilation(assim_config(5), truth_->observations, c, pool_);
    EXPECT_EQ(a.paths, b.paths);
    EXPECT_EQ(a.od, b.od);
  }
}

TEST_F(AssimilationRunTest, CountsPullMovesTowardObservedStores) {
  // Stores 12-17 are unattractive to every truth group; assimilated agents
  // should send far fewer transitions there than the uniform baseline.
  const auto base = run_baseline(assim_config(6));
  const auto c1 = run_assimilation(assim_config(6), truth_->observations, AssimilationCase::counts);
  auto cold_arrivals = [](const ODMatrix& od) {
    std::int64_t s = 0;
    for (std::size_t o = 0; o < 18; ++o)
      for (std::size_t d = 12; d < 18; ++d) s += od(o, d);
    return s;
  };
  EXPECT_LT(cold_arrivals(c1.od), cold_arrivals(base.od) / 2);
}

}  // namespace
}  // namespace flowda
