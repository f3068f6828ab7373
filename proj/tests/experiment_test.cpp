#include <gtest/gtest.h>

#include <filesystem>

#include "flowda/experiment.hpp"

namespace flowda {
namespace {

namespace fs = std::filesystem;

ExperimentConfig small_experiment(const fs::path& out) {
  auto cfg = build_config(parse_config_text(
      "experiment.replicates = 2\n"
      "experiment.cases = all\n"
      "experiment.jobs = 2\n"
      "sim.horizon_steps = 120\n"));
  cfg.output_dir = out.string();
  return cfg;
}

fs::path fresh(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("flowda_experiment_" + name);
  fs::remove_all(dir);
  return dir;
}

TEST(Seeds, DerivedSeedsDifferByRoleAndReplicate) {
  EXPECT_NE(derive_seed(1, 0, "truth"), derive_seed(1, 0, "pool"));
  EXPECT_NE(derive_seed(1, 0, "truth"), derive_seed(1, 1, "truth"));
  EXPECT_NE(derive_seed(1, 0, "truth"), derive_seed(2, 0, "truth"));
  EXPECT_EQ(derive_seed(1, 3, "case2"), derive_seed(1, 3, "case2"));
  EXPECT_EQ(replicate_dir_name(7), "007");
}

TEST(Experiment, WritesTheExpectedTree) {
  const auto out = fresh("tree");
  const auto cfg = small_experiment(out);
  const auto metrics = run_experiment(cfg);
  for (const char* f : {"truth/000/obs_counts.csv", "truth/000/obs_counts_attr.csv", "truth/001/sequence_pool.csv",
                        "truth/001/truth_od.csv", "truth/000/truth_paths.csv", "baseline/001/baseline_od.csv",
                        "case1/000/assim_od.csv", "case2/001/assim_paths.csv", "case3/000/assim_od.csv",
                        "case3_random/001/assim_od.csv", "aggregate/od_truth_mean.csv",
                        "aggregate/od_baseline_mean.csv", "aggregate/case1/od_assim_mean.csv",
                        "aggregate/case3/od_random_mean.csv", "aggregate/case2/ngram_top20.csv",
                        "aggregate/metrics.json", "run_manifest.json"})
    EXPECT_TRUE(fs::is_regular_file(out / f)) << f;
  EXPECT_EQ(metrics["replicates"], 2);
  EXPECT_EQ(metrics["cases"]["case3"]["reference"], "random_sequences");
  EXPECT_EQ(metrics["cases"]["case1"]["reference"], "baseline");
  EXPECT_EQ(metrics["cases"]["case1"]["assim"]["per_run"].size(), 2u);
}

TEST(Experiment, RerunsAreByteIdenticalAcrossWorkerCounts) {
  const auto a_dir = fresh("rerun_a"), b_dir = fresh("rerun_b");
  auto a = small_experiment(a_dir);
  auto b = small_experiment(b_dir);
  a.jobs = 1;
  b.jobs = 2;
  run_experiment(a);
  run_experiment(b);
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(a_dir)) {
    if (!e.is_regular_file() || e.path().filename() == "run_manifest.json") continue;
    const auto rel = fs::relative(e.path(), a_dir);
    ASSERT_TRUE(fs::exists(b_dir / rel)) << rel;
    EXPECT_EQ(io::file_sha256(e.path()), io::file_sha256(b_dir / rel)) << rel;
    ++compared;
  }
  EXPECT_GT(compared, 20u);
}

TEST(Experiment, EvaluateRebuildsMetricsFromFiles) {
  const auto out = fresh("evaluate");
  const auto cfg = small_experiment(out);
  const auto first = run_experiment(cfg);
  const auto again = evaluate(cfg, out, true);
  EXPECT_EQ(first.dump(), again.dump());
}

TEST(Experiment, ManifestRecordsHashSeedsAndChecksums) {
  const auto out = fresh("manifest");
  const auto cfg = small_experiment(out);
  run_experiment(cfg);
  const auto m = nlohmann::json::parse(io::read_text(out / "run_manifest.json"));
  EXPECT_EQ(m["config_hash"], config_hash(cfg));
  EXPECT_EQ(m["seeds"].size(), 2 * replicate_roles(cfg).size());
  EXPECT_EQ(m["files"]["aggregate/metrics.json"], io::file_sha256(out / "aggregate/metrics.json"));
  EXPECT_TRUE(m.contains("wall_time_seconds"));
}

TEST(Experiment, UnwritableOutputRootFails) {
  auto cfg = small_experiment("/proc/flowda_no_such_dir");
  EXPECT_THROW(run_experiment(cfg), Error);
}

}  // namespace
}  // namespace flowda
