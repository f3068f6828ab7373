#pragma once

// Orchestration of the full twin experiment: per replicate a truth run, its
// observation products, an unassimilated baseline and each selected
// assimilation case; then aggregation over replicates and a run manifest.
//
// Output tree:
//   <out>/truth/<rep>/      obs_counts.csv obs_counts_attr.csv sequence_pool.csv truth_od.csv truth_paths.csv
//   <out>/baseline/<rep>/   baseline_od.csv baseline_paths.csv
//   <out>/case<N>/<rep>/    assim_od.csv assim_paths.csv
//   <out>/case3_random/<rep>/  (uniform sequence assignment, same files)
//   <out>/aggregate/        od_truth_mean.csv od_baseline_mean.csv metrics.json
//   <out>/aggregate/case<N>/ od_assim_mean.csv ngram_top20.csv
//   <out>/run_manifest.json

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "flowda/assimilation.hpp"
#include "flowda/config.hpp"
#include "flowda/io.hpp"
#include "flowda/metrics.hpp"
#include "flowda/twin.hpp"

namespace flowda {

namespace fs = std::filesystem;

inline constexpr std::string_view kRandomSequences = "case3_random";

inline std::string replicate_dir_name(std::size_t r) {
  std::ostringstream os;
  os << std::setw(3) << std::setfill('0') << r;
  return os.str();
}

inline std::vector<std::string> replicate_roles(const ExperimentConfig& cfg) {
  std::vector<std::string> roles = {"truth", "pool", "baseline"};
  for (auto c : cfg.cases) {
    roles.push_back(case_label(c));
    if (c == AssimilationCase::sequences) roles.emplace_back(kRandomSequences);
  }
  return roles;
}

// --- single-run building blocks (also used by the CLI subcommands) ----------

struct TruthProducts {
  TruthRun truth;
  SequencePool pool;
};

inline std::size_t path_columns(const SimConfig& cfg) { return static_cast<std::size_t>(cfg.max_transitions) + 1; }

/// Truth run plus biased pool, written to `dir`.
inline TruthProducts generate_observations(const ExperimentConfig& cfg, std::uint64_t truth_seed,
                                           std::uint64_t pool_seed, const fs::path& dir) {
  SimConfig sim = cfg.truth;
  sim.rng_seed = truth_seed;
  TruthProducts out;
  out.truth = run_truth(sim, cfg.count_spawn_as_inflow);
  Rng pool_rng(pool_seed);
  out.pool = sample_biased_pool(out.truth.archive, cfg.pool_ratios, cfg.pool_size, pool_rng);

  io::ensure_dir(dir);
  io::write_text(dir / "obs_counts.csv", io::obs_counts_csv(out.truth.observations));
  io::write_text(dir / "obs_counts_attr.csv", io::obs_counts_attr_csv(out.truth.observations));
  io::write_text(dir / "sequence_pool.csv", io::sequence_pool_csv(out.pool));
  io::write_text(dir / "truth_od.csv", io::od_csv(out.truth.od));
  io::write_text(dir / "truth_paths.csv", io::paths_csv(out.truth.paths, out.truth.groups, {}, path_columns(sim)));
  return out;
}

inline SimulationResult baseline_to(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir) {
  SimConfig sim = cfg.assim;
  sim.rng_seed = seed;
  auto res = run_baseline(sim);
  io::ensure_dir(dir);
  io::write_text(dir / "baseline_od.csv", io::od_csv(res.od));
  io::write_text(dir / "baseline_paths.csv", io::paths_csv(res.paths, res.groups, {}, path_columns(sim)));
  return res;
}

inline SimulationResult assimilate_to(const ExperimentConfig& cfg, AssimilationCase which,
                                      std::span<const ObservationRecord> obs, const SequencePool* pool,
                                      std::uint64_t seed, const AssimilationOptions& opt, const fs::path& dir) {
  SimConfig sim = cfg.assim;
  sim.rng_seed = seed;
  auto res = run_assimilation(sim, obs, which, pool, opt);
  io::ensure_dir(dir);
  io::write_text(dir / "assim_od.csv", io::od_csv(res.od));
  io::write_text(dir / "assim_paths.csv", io::paths_csv(res.paths, res.groups, res.sequence_ids, path_columns(sim)));
  return res;
}

/// Everything for one replicate. Pure function of (config, replicate) apart
/// from the files it writes under `root`.
inline void run_replicate(const ExperimentConfig& cfg, std::size_t r, const fs::path& root) {
  const auto rep = replicate_dir_name(r);
  auto seed = [&](std::string_view role) { return derive_seed(cfg.base_seed, r, role); };

  const auto products = generate_observations(cfg, seed("truth"), seed("pool"), root / "truth" / rep);
  baseline_to(cfg, seed("baseline"), root / "baseline" / rep);
  for (auto c : cfg.cases) {
    auto opt = cfg.assimilation;
    opt.random_baseline = false;
    assimilate_to(cfg, c, products.truth.observations, &products.pool, seed(case_label(c)), opt,
                  root / case_label(c) / rep);
    if (c == AssimilationCase::sequences) {
      opt.random_baseline = true;
      assimilate_to(cfg, c, products.truth.observations, &products.pool, seed(kRandomSequences), opt,
                    root / std::string(kRandomSequences) / rep);
    }
  }
}

// --- evaluation ------------------------------------------------------------

namespace detail {

inline std::vector<std::size_t> discover_replicates(const fs::path& truth_root) {
  std::vector<std::size_t> reps;
  if (!fs::is_directory(truth_root))
    throw Error(ErrorKind::input_data, "no truth runs under '" + truth_root.string() + "'");
  for (const auto& e : fs::directory_iterator(truth_root)) {
    if (!e.is_directory()) continue;
    const auto name = e.path().filename().string();
    if (name.empty() || !std::all_of(name.begin(), name.end(), ::isdigit)) continue;
    reps.push_back(std::stoul(name));
  }
  std::sort(reps.begin(), reps.end());
  if (reps.empty()) throw Error(ErrorKind::input_data, "no replicate directories under '" + truth_root.string() + "'");
  return reps;
}

inline nlohmann::ordered_json stats_json(const RunAggregate& a) {
  nlohmann::ordered_json j;
  j["per_run_mean"] = a.per_run_stats.mean;
  j["per_run_std"] = a.per_run_stats.stddev;
  j["discrepancy_of_means"] = a.discrepancy_of_means;
  j["per_run"] = a.per_run;
  return j;
}

struct RunSet {
  std::vector<ODMatrix> od;
  std::vector<NgramTable> ngrams;
  std::vector<std::vector<io::PathRecord>> paths;
};

inline RunSet load_runs(const fs::path& dir, const std::vector<std::size_t>& reps, const std::string& prefix,
                        std::size_t stores, std::size_t n) {
  RunSet s;
  for (auto r : reps) {
    const auto d = dir / replicate_dir_name(r);
    s.od.push_back(io::read_od(d / (prefix + "_od.csv"), stores));
    s.paths.push_back(io::read_paths(d / (prefix + "_paths.csv")));
    const auto p = io::only_paths(s.paths.back());
    s.ngrams.push_back(ngram_table(p, n));
  }
  return s;
}

inline std::string ngram_top_csv(const std::map<Ngram, double>& truth, const std::map<Ngram, double>& assim,
                                 const std::map<Ngram, double>& reference, std::size_t n, std::size_t k) {
  auto freq = [](const std::map<Ngram, double>& m, const Ngram& key) {
    auto it = m.find(key);
    return it == m.end() ? 0.0 : it->second;
  };
  std::string out = "rank";
  for (std::size_t i = 0; i < n; ++i) out += ",s" + std::to_string(i);
  out += ",freq_truth,freq_assim,freq_reference\n";
  std::size_t rank = 1;
  for (const auto& [key, f] : top_k(truth, k)) {
    out += std::to_string(rank++);
    for (auto s : key) out += "," + std::to_string(s);
    out += "," + io::detail::fixed6(f) + "," + io::detail::fixed6(freq(assim, key)) + "," +
           io::detail::fixed6(freq(reference, key)) + "\n";
  }
  return out;
}

inline double l1_to_uniform(const std::vector<double>& c, const std::vector<double>& target) {
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) s += std::abs(c[i] - target[i]);
  return s;
}

/// Composition of assigned sequences per replicate, by the pool's attr labels.
inline std::vector<std::vector<double>> assigned_compositions(const fs::path& root, const std::string& case_dir,
                                                              const std::vector<std::size_t>& reps,
                                                              const RunSet& runs, std::size_t groups) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < reps.size(); ++i) {
    const auto pool = io::read_sequence_pool(root / "truth" / replicate_dir_name(reps[i]) / "sequence_pool.csv");
    std::vector<double> c(groups, 0.0);
    double n = 0.0;
    for (const auto& rec : runs.paths[i]) {
      if (!rec.sequence_id) continue;
      if (*rec.sequence_id >= pool.entries.size())
        throw Error(ErrorKind::input_data, case_dir + ": sequence id outside the pool");
      c.at(pool.entries[*rec.sequence_id].attr) += 1.0;
      n += 1.0;
    }
    if (n > 0.0)
      for (double& v : c) v /= n;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace detail

/// Aggregates an experiment tree into <root>/aggregate and returns the
/// metrics.json content. With `discover`, replicates and cases are taken
/// from the directories present; otherwise from the configuration.
inline nlohmann::ordered_json evaluate(const ExperimentConfig& cfg, const fs::path& root, bool discover = true) {
  const std::size_t stores = cfg.truth.store_count;
  const std::size_t n = cfg.ngram_n;
  std::vector<std::size_t> reps;
  if (discover) {
    reps = detail::discover_replicates(root / "truth");
  } else {
    for (std::size_t r = 0; r < cfg.replicate_count; ++r) reps.push_back(r);
  }
  auto selected = [&](AssimilationCase c) {
    if (discover) return fs::is_directory(root / case_label(c));
    return std::find(cfg.cases.begin(), cfg.cases.end(), c) != cfg.cases.end();
  };
  const auto agg_dir = root / "aggregate";
  io::ensure_dir(agg_dir);

  const auto truth = detail::load_runs(root / "truth", reps, "truth", stores, n);
  const auto baseline = detail::load_runs(root / "baseline", reps, "baseline", stores, n);
  const auto truth_ngrams = mean_ngrams(truth.ngrams);
  const auto baseline_ngrams = mean_ngrams(baseline.ngrams);

  const auto base_agg = aggregate_runs(truth.od, baseline.od);
  io::write_text(agg_dir / "od_truth_mean.csv", io::mean_od_csv(base_agg.mean_reference));
  io::write_text(agg_dir / "od_baseline_mean.csv", io::mean_od_csv(base_agg.mean_estimate));

  nlohmann::ordered_json metrics;
  metrics["replicates"] = reps.size();
  metrics["store_count"] = stores;
  metrics["baseline"] = detail::stats_json(base_agg);
  metrics["cases"] = nlohmann::ordered_json::object();

  for (auto c : {AssimilationCase::counts, AssimilationCase::attribute_counts, AssimilationCase::sequences}) {
    const auto label = case_label(c);
    if (!selected(c)) continue;
    const auto runs = detail::load_runs(root / label, reps, "assim", stores, n);
    const auto agg = aggregate_runs(truth.od, runs.od);
    const auto case_dir = agg_dir / label;
    io::ensure_dir(case_dir);
    io::write_text(case_dir / "od_assim_mean.csv", io::mean_od_csv(agg.mean_estimate));

    nlohmann::ordered_json j;
    j["assim"] = detail::stats_json(agg);
    j["baseline"] = detail::stats_json(base_agg);

    const RunAggregate* reference = &base_agg;
    std::map<Ngram, double> reference_ngrams = baseline_ngrams;
    std::optional<RunAggregate> random_agg;
    if (c == AssimilationCase::sequences && fs::is_directory(root / std::string(kRandomSequences))) {
      const auto rnd = detail::load_runs(root / std::string(kRandomSequences), reps, "assim", stores, n);
      random_agg = aggregate_runs(truth.od, rnd.od);
      io::write_text(case_dir / "od_random_mean.csv", io::mean_od_csv(random_agg->mean_estimate));
      j["random_sequences"] = detail::stats_json(*random_agg);
      reference = &*random_agg;
      reference_ngrams = mean_ngrams(rnd.ngrams);

      const std::size_t groups = cfg.truth.group_count;
      const auto weighted = detail::assigned_compositions(root, label, reps, runs, groups);
      const auto uniform = detail::assigned_compositions(root, std::string(kRandomSequences), reps, rnd, groups);
      std::vector<double> target(groups, 0.0);
      for (std::size_t g = 0; g < groups; ++g)
        target[g] = static_cast<double>(cfg.truth.group_quotas[g]) / static_cast<double>(cfg.truth.total_agents);
      std::vector<double> l1w, l1r;
      std::vector<double> mean_w(groups, 0.0), mean_r(groups, 0.0);
      for (std::size_t i = 0; i < reps.size(); ++i) {
        l1w.push_back(detail::l1_to_uniform(weighted[i], target));
        l1r.push_back(detail::l1_to_uniform(uniform[i], target));
        for (std::size_t g = 0; g < groups; ++g) {
          mean_w[g] += weighted[i][g] / static_cast<double>(reps.size());
          mean_r[g] += uniform[i][g] / static_cast<double>(reps.size());
        }
      }
      nlohmann::ordered_json comp;
      comp["truth"] = target;
      comp["weighted_mean"] = mean_w;
      comp["random_mean"] = mean_r;
      comp["l1_weighted_mean"] = summarize(l1w).mean;
      comp["l1_random_mean"] = summarize(l1r).mean;
      j["composition"] = comp;
    }
    j["reference"] = reference == &base_agg ? "baseline" : "random_sequences";
    j["ratio_per_run"] = agg.per_run_stats.mean / reference->per_run_stats.mean;
    j["ratio_of_means"] = agg.discrepancy_of_means / reference->discrepancy_of_means;
    io::write_text(case_dir / "ngram_top20.csv",
                   detail::ngram_top_csv(truth_ngrams, mean_ngrams(runs.ngrams), reference_ngrams, n, cfg.top_k));
    metrics["cases"][label] = j;
  }
  io::write_text(agg_dir / "metrics.json", metrics.dump(2) + "\n");
  return metrics;
}

// --- manifest --------------------------------------------------------------

inline std::string config_hash(const ExperimentConfig& cfg) {
  return io::sha256_hex(resolved_config_text(cfg, true));
}

inline void write_manifest(const ExperimentConfig& cfg, const fs::path& root, double wall_seconds) {
  nlohmann::ordered_json m;
  nlohmann::ordered_json echo = nlohmann::ordered_json::object();
  for (const auto& [k, v] : parse_config_text(resolved_config_text(cfg))) echo[k] = v;
  m["config"] = echo;
  m["config_hash"] = config_hash(cfg);
  m["base_seed"] = cfg.base_seed;
  m["replicates"] = cfg.replicate_count;
  nlohmann::ordered_json seeds = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < cfg.replicate_count; ++r)
    for (const auto& role : replicate_roles(cfg))
      seeds.push_back({{"replicate", r}, {"role", role}, {"seed", derive_seed(cfg.base_seed, r, role)}});
  m["seeds"] = seeds;

  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() != "run_manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  nlohmann::ordered_json sums = nlohmann::ordered_json::object();
  for (const auto& f : files) sums[fs::relative(f, root).generic_string()] = io::file_sha256(f);
  m["files"] = sums;

  m["wall_time_seconds"] = wall_seconds;
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ts;
  ts << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  m["created_utc"] = ts.str();
  io::write_text(root / "run_manifest.json", m.dump(2) + "\n");
}

// --- whole experiment ------------------------------------------------------

/// Runs every replicate on a worker pool, then aggregates and writes the
/// manifest. Progress lines go to `log` when given.
inline nlohmann::ordered_json run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path root = cfg.output_dir;
  io::ensure_dir(root);

  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    while (true) {
      const std::size_t r = next.fetch_add(1);
      if (r >= cfg.replicate_count) return;
      {
        std::lock_guard lock(mu);
        if (failure) return;
      }
      try {
        run_replicate(cfg, r, root);
        if (log) {
          std::lock_guard lock(mu);
          *log << "replicate " << r << " done\n";
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  {
    const std::size_t workers = std::min(cfg.worker_count(), cfg.replicate_count);
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  auto metrics = evaluate(cfg, root, false);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(cfg, root, wall);
  return metrics;
}

}  // namespace flowda
