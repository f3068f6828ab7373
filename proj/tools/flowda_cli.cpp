// flowda: command-line front end for the twin experiment.
//
//   flowda validate-config --config exp.cfg
//   flowda generate-obs   --config exp.cfg --seed 7 --out obs/
//   flowda baseline       --config exp.cfg --seed 7 --out base/
//   flowda assimilate     --config exp.cfg --case 2 --obs obs/ --out c2/ [--random-baseline]
//   flowda evaluate       --config exp.cfg --out run/
//   flowda experiment     --config exp.cfg --case all --runs 30 --seed 1 --out run/ [--jobs N]

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "flowda/config.hpp"
#include "flowda/experiment.hpp"
#include "flowda/io.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

flowda::ExperimentConfig load(const CommonArgs& a) {
  auto cfg = a.config.empty() ? flowda::build_config({}) : flowda::load_config(a.config);
  if (a.seed) cfg.base_seed = *a.seed;
  if (!a.out.empty()) cfg.output_dir = a.out;
  return cfg;
}

std::vector<flowda::AssimilationCase> parse_case_flag(const std::string& text) {
  return flowda::config_detail::parse_cases("--case", text);
}

void print_summary(const nlohmann::ordered_json& metrics) {
  std::cout << "replicates: " << metrics["replicates"] << "\n";
  std::cout << "baseline discrepancy (per-run mean): " << metrics["baseline"]["per_run_mean"] << "\n";
  for (const auto& [label, c] : metrics["cases"].items()) {
    std::cout << label << ": per-run mean " << c["assim"]["per_run_mean"] << ", discrepancy of means "
              << c["assim"]["discrepancy_of_means"] << ", ratio vs " << c["reference"].get<std::string>() << " "
              << c["ratio_per_run"] << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Particle-filter data assimilation for agent-based roaming simulations"};
  app.require_subcommand(1);

  CommonArgs common;
  auto add_common = [&](CLI::App* sub, bool out_required) {
    sub->add_option("--config", common.config, "Configuration file (key = value)");
    sub->add_option("--seed", common.seed, "Base seed");
    auto* out = sub->add_option("--out", common.out, "Output directory");
    if (out_required) out->required();
  };

  auto* validate = app.add_subcommand("validate-config", "Print the fully resolved configuration");
  validate->add_option("--config", common.config, "Configuration file")->required();

  auto* gen = app.add_subcommand("generate-obs", "Run the truth world and write observation products");
  add_common(gen, true);

  auto* base = app.add_subcommand("baseline", "Run the unassimilated model");
  add_common(base, true);

  auto* assim = app.add_subcommand("assimilate", "Run one assimilation case against observation files");
  add_common(assim, true);
  std::string case_text;
  std::string obs_dir;
  bool random_baseline = false;
  assim->add_option("--case", case_text, "Case 1, 2 or 3")->required()->check(CLI::IsMember({"1", "2", "3"}));
  assim->add_option("--obs", obs_dir, "Directory with obs_counts*.csv and sequence_pool.csv (default: --out)");
  assim->add_flag("--random-baseline", random_baseline, "Case 3: assign pooled sequences uniformly");

  auto* eval = app.add_subcommand("evaluate", "Aggregate an experiment output tree");
  add_common(eval, true);

  auto* exp = app.add_subcommand("experiment", "Full pipeline over all replicates and cases");
  add_common(exp, false);
  std::string exp_cases;
  std::optional<std::size_t> runs;
  std::optional<std::size_t> jobs;
  exp->add_option("--case", exp_cases, "1, 2, 3 or all");
  exp->add_option("--runs", runs, "Number of replicates")->check(CLI::PositiveNumber);
  exp->add_option("--jobs", jobs, "Worker threads (default: available processors)")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (validate->parsed()) {
      const auto cfg = flowda::load_config(common.config);
      std::cout << flowda::resolved_config_text(cfg);
      return 0;
    }

    auto cfg = load(common);
    const std::filesystem::path out = common.out;

    if (gen->parsed()) {
      const auto p = flowda::generate_observations(cfg, flowda::derive_seed(cfg.base_seed, 0, "truth"),
                                                   flowda::derive_seed(cfg.base_seed, 0, "pool"), out);
      std::cout << "truth run: " << p.truth.agents_spawned << " agents, " << flowda::total(p.truth.od)
                << " transitions, pool of " << p.pool.size() << " sequences -> " << out.string() << "\n";
      return 0;
    }
    if (base->parsed()) {
      const auto r = flowda::baseline_to(cfg, flowda::derive_seed(cfg.base_seed, 0, "baseline"), out);
      std::cout << "baseline run: " << r.agents_spawned << " agents -> " << out.string() << "\n";
      return 0;
    }
    if (assim->parsed()) {
      const auto which = parse_case_flag(case_text).front();
      const std::filesystem::path src = obs_dir.empty() ? out : std::filesystem::path(obs_dir);
      const auto obs = flowda::io::read_observations(src, cfg.assim.group_count, cfg.assim.store_count);
      std::optional<flowda::SequencePool> pool;
      if (which == flowda::AssimilationCase::sequences) pool = flowda::io::read_sequence_pool(src / "sequence_pool.csv");
      auto opt = cfg.assimilation;
      if (random_baseline) opt.random_baseline = true;
      const auto label = opt.random_baseline && which == flowda::AssimilationCase::sequences
                             ? std::string(flowda::kRandomSequences)
                             : flowda::case_label(which);
      const auto r = flowda::assimilate_to(cfg, which, obs, pool ? &*pool : nullptr,
                                           flowda::derive_seed(cfg.base_seed, 0, label), opt, out);
      std::cout << label << " run: " << r.agents_spawned << " agents -> " << out.string() << "\n";
      return 0;
    }
    if (eval->parsed()) {
      print_summary(flowda::evaluate(cfg, out, true));
      return 0;
    }
    if (exp->parsed()) {
      if (!exp_cases.empty()) cfg.cases = parse_case_flag(exp_cases);
      if (runs) cfg.replicate_count = *runs;
      if (jobs) cfg.jobs = *jobs;
      print_summary(flowda::run_experiment(cfg, &std::cerr));
      std::cout << "output: " << cfg.output_dir << "\n";
      return 0;
    }
  } catch (const flowda::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
