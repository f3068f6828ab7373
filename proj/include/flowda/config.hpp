#pragma once

// Experiment configuration: a flat `key = value` text file with dotted
// namespaces. Every key is optional; an empty file reproduces the default
// protocol (18 stores, 2000 agents, 200 steps, 30 replicates, cases 1-3).

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "flowda/assimilation.hpp"
#include "flowda/model.hpp"

namespace flowda {

/// Error categories map onto distinct process exit codes.
enum class ErrorKind : int {
  config_unreadable = 3,
  config_schema = 4,
  output_unwritable = 5,
  input_data = 6,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

struct ExperimentConfig {
  SimConfig truth;
  SimConfig assim;
  std::vector<AssimilationCase> cases = {AssimilationCase::counts, AssimilationCase::attribute_counts,
                                         AssimilationCase::sequences};
  std::size_t replicate_count = 30;
  std::uint64_t base_seed = 1;
  std::string output_dir = "out";
  std::size_t jobs = 0;  // 0: number of available processors

  AssimilationOptions assimilation;
  bool count_spawn_as_inflow = true;
  std::vector<double> pool_ratios = {0.4, 0.25, 0.2, 0.15};
  std::size_t pool_size = 400;
  std::size_t ngram_n = 3;
  std::size_t top_k = 20;

  std::size_t worker_count() const {
    if (jobs > 0) return jobs;
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
  }
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline Error schema(const std::string& key, const std::string& msg) {
  return Error(ErrorKind::config_schema, "config key '" + key + "': " + msg);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || p != end || text.empty()) throw schema(key, "cannot parse '" + text + "' as a number");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw schema(key, "expected true/false, got '" + text + "'");
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (const auto& item : split(text, ',')) out.push_back(parse_number<T>(key, item));
  return out;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) os << ',';
    if constexpr (std::is_floating_point_v<T>)
      os << format_double(xs[i]);
    else
      os << xs[i];
  }
  return os.str();
}

inline Grid<double> read_distance_csv(const std::string& key, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw schema(key, "cannot read distance file '" + path.string() + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    rows.push_back(parse_list<double>(key, line));
  }
  Grid<double> g(rows.size(), rows.size(), 0.0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.size()) throw schema(key, "distance file must hold a square matrix");
    for (std::size_t c = 0; c < rows.size(); ++c) g(r, c) = rows[r][c];
  }
  return g;
}

/// Rows separated by ';', entries by ','.
inline Grid<double> parse_matrix(const std::string& key, const std::string& text) {
  const auto rows = split(text, ';');
  Grid<double> g(rows.size(), rows.size(), 0.0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto vals = parse_list<double>(key, rows[r]);
    if (vals.size() != rows.size()) throw schema(key, "must be a square matrix");
    for (std::size_t c = 0; c < vals.size(); ++c) g(r, c) = vals[c];
  }
  return g;
}

inline std::vector<AssimilationCase> parse_cases(const std::string& key, const std::string& text) {
  if (text == "all") return {AssimilationCase::counts, AssimilationCase::attribute_counts, AssimilationCase::sequences};
  std::vector<AssimilationCase> out;
  for (int c : parse_list<int>(key, text)) {
    if (c < 1 || c > 3) throw schema(key, "case must be 1, 2 or 3");
    const auto ac = static_cast<AssimilationCase>(c);
    if (std::find(out.begin(), out.end(), ac) == out.end()) out.push_back(ac);
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw schema(key, "no cases selected");
  return out;
}

}  // namespace config_detail

/// Parses `key = value` lines. `#` starts a comment. Unknown keys and
/// malformed values raise Error(config_schema) naming the key.
inline std::map<std::string, std::string> parse_config_text(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = config_detail::trim(std::string_view(line).substr(0, line.find('#')));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::config_schema, "config line " + std::to_string(lineno) + ": expected 'key = value'");
    const auto key = config_detail::trim(std::string_view(t).substr(0, eq));
    const auto value = config_detail::trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw Error(ErrorKind::config_schema, "config line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second) throw config_detail::schema(key, "defined more than once");
  }
  return kv;
}

/// Builds a validated configuration from parsed key/value pairs. Relative
/// file references resolve against `base_dir`.
inline ExperimentConfig build_config(const std::map<std::string, std::string>& kv,
                                     const std::filesystem::path& base_dir = {}) {
  using namespace config_detail;
  ExperimentConfig cfg;
  SimConfig sim;  // structural fields shared by truth and assimilation worlds
  BehaviorParams params;
  std::optional<Grid<double>> distance;
  std::map<std::size_t, std::vector<double>> truth_rows, assim_rows;
  double assim_uniform = 5.0;
  std::set<std::string> seen;

  auto size_v = [&](const std::string& k, const std::string& v) { return parse_number<std::size_t>(k, v); };

  for (const auto& [key, value] : kv) {
    seen.insert(key);
    if (key == "sim.store_count") sim.store_count = size_v(key, value);
    else if (key == "sim.total_agents") sim.total_agents = size_v(key, value);
    else if (key == "sim.initial_agents") sim.initial_agents = size_v(key, value);
    else if (key == "sim.replenish_threshold") sim.replenish_threshold = size_v(key, value);
    else if (key == "sim.replenish_count") sim.replenish_count = size_v(key, value);
    else if (key == "sim.max_transitions") sim.max_transitions = parse_number<int>(key, value);
    else if (key == "sim.dwell_min") sim.dwell_min = parse_number<int>(key, value);
    else if (key == "sim.dwell_max") sim.dwell_max = parse_number<int>(key, value);
    else if (key == "sim.horizon_steps") sim.horizon_steps = size_v(key, value);
    else if (key == "sim.group_count") sim.group_count = size_v(key, value);
    else if (key == "sim.group_quotas") sim.group_quotas = parse_list<std::size_t>(key, value);
    else if (key == "model.omega") params.omega = parse_number<double>(key, value);
    else if (key == "model.k") params.k = parse_number<double>(key, value);
    else if (key == "model.lambda") params.lambda = parse_number<double>(key, value);
    else if (key == "model.distance_file") distance = read_distance_csv(key, base_dir / value);
    else if (key == "model.distance") distance = parse_matrix(key, value);
    else if (key.starts_with("truth.attractiveness.")) {
      truth_rows[parse_number<std::size_t>(key, key.substr(21))] = parse_list<double>(key, value);
    } else if (key == "assim.attractiveness") assim_uniform = parse_number<double>(key, value);
    else if (key.starts_with("assim.attractiveness.")) {
      assim_rows[parse_number<std::size_t>(key, key.substr(21))] = parse_list<double>(key, value);
    } else if (key == "assim.particles") cfg.assimilation.particles = size_v(key, value);
    else if (key == "pool.ratios") cfg.pool_ratios = parse_list<double>(key, value);
    else if (key == "pool.size") cfg.pool_size = size_v(key, value);
    else if (key == "experiment.replicates") cfg.replicate_count = size_v(key, value);
    else if (key == "experiment.base_seed") cfg.base_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "experiment.cases") cfg.cases = parse_cases(key, value);
    else if (key == "experiment.output_dir") cfg.output_dir = value;
    else if (key == "experiment.jobs") cfg.jobs = size_v(key, value);
    else if (key == "metrics.ngram_n") cfg.ngram_n = size_v(key, value);
    else if (key == "metrics.top_k") cfg.top_k = size_v(key, value);
    else if (key == "flags.weight_accumulation") cfg.assimilation.weight_accumulation = parse_bool(key, value);
    else if (key == "flags.explicit_resample") cfg.assimilation.explicit_resample = parse_bool(key, value);
    else if (key == "flags.random_baseline") cfg.assimilation.random_baseline = parse_bool(key, value);
    else if (key == "flags.filter_moves") cfg.assimilation.filter_moves = parse_bool(key, value);
    else if (key == "flags.weighted_placement") cfg.assimilation.weighted_placement = parse_bool(key, value);
    else if (key == "flags.allow_self_transition") sim.allow_self_transition = parse_bool(key, value);
    else if (key == "flags.count_spawn_as_inflow") cfg.count_spawn_as_inflow = parse_bool(key, value);
    else throw schema(key, "unknown key");
  }

  // Defaults that depend on other fields.
  if (!seen.contains("sim.group_quotas") && (seen.contains("sim.group_count") || seen.contains("sim.total_agents"))) {
    if (sim.group_count == 0) throw schema("sim.group_count", "must be >= 1");
    sim.group_quotas.assign(sim.group_count, sim.total_agents / sim.group_count);
    for (std::size_t g = 0; g < sim.total_agents % sim.group_count; ++g) ++sim.group_quotas[g];
  }
  if (sim.group_quotas.size() != sim.group_count)
    throw schema("sim.group_quotas", "has " + std::to_string(sim.group_quotas.size()) + " entries but sim.group_count = " +
                                         std::to_string(sim.group_count));
  std::size_t quota_sum = 0;
  for (auto q : sim.group_quotas) quota_sum += q;
  if (quota_sum != sim.total_agents)
    throw schema("sim.group_quotas", "sum " + std::to_string(quota_sum) + " differs from sim.total_agents = " +
                                         std::to_string(sim.total_agents));
  if (sim.dwell_min > sim.dwell_max)
    throw schema("sim.dwell_min", std::to_string(sim.dwell_min) + " exceeds sim.dwell_max = " + std::to_string(sim.dwell_max));
  if (cfg.replicate_count < 1) throw schema("experiment.replicates", "must be >= 1");
  if (cfg.assimilation.particles < 1) throw schema("assim.particles", "must be >= 1");
  if (cfg.pool_size < 1) throw schema("pool.size", "must be >= 1");
  if (cfg.pool_ratios.size() != sim.group_count)
    throw schema("pool.ratios", "needs one ratio per group (" + std::to_string(sim.group_count) + ")");
  double ratio_sum = 0.0;
  for (double r : cfg.pool_ratios) {
    if (r < 0.0) throw schema("pool.ratios", "ratios must be non-negative");
    ratio_sum += r;
  }
  if (std::abs(ratio_sum - 1.0) > 1e-9) throw schema("pool.ratios", "ratios must sum to 1");
  if (cfg.ngram_n < 1) throw schema("metrics.ngram_n", "must be >= 1");

  sim.behavior = {params};
  sim.graph.store_count = sim.store_count;
  if (distance && distance->rows() != sim.store_count)
    throw schema("model.distance", "matrix size differs from sim.store_count");
  sim.graph.distance = distance ? *distance : unit_distance(sim.store_count);

  auto table = [&](const std::string& prefix, Grid<double> base, const std::map<std::size_t, std::vector<double>>& rows) {
    for (const auto& [g, row] : rows) {
      const std::string key = prefix + std::to_string(g);
      if (g >= sim.group_count) throw schema(key, "group index out of range");
      if (row.size() != sim.store_count) throw schema(key, "needs sim.store_count values");
      for (std::size_t s = 0; s < row.size(); ++s) base(g, s) = row[s];
    }
    return base;
  };
  cfg.truth = sim;
  cfg.truth.graph.attractiveness =
      table("truth.attractiveness.", truth_attractiveness(sim.group_count, sim.store_count), truth_rows);
  cfg.assim = sim;
  cfg.assim.graph.attractiveness =
      table("assim.attractiveness.", uniform_attractiveness(sim.group_count, sim.store_count, assim_uniform), assim_rows);

  try {
    cfg.truth.validate();
    cfg.assim.validate();
  } catch (const std::invalid_argument& e) {
    throw Error(ErrorKind::config_schema, std::string("invalid configuration: ") + e.what());
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::config_unreadable, "cannot read config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return build_config(parse_config_text(ss.str()), path.parent_path());
}

/// Fully resolved configuration as sorted `key = value` lines. With
/// `semantic_only`, keys that do not affect results (output location,
/// worker count) are left out; that form feeds the config hash.
inline std::string resolved_config_text(const ExperimentConfig& cfg, bool semantic_only = false) {
  using namespace config_detail;
  std::map<std::string, std::string> kv;
  const auto& s = cfg.truth;
  kv["sim.store_count"] = std::to_string(s.store_count);
  kv["sim.total_agents"] = std::to_string(s.total_agents);
  kv["sim.initial_agents"] = std::to_string(s.initial_agents);
  kv["sim.replenish_threshold"] = std::to_string(s.replenish_threshold);
  kv["sim.replenish_count"] = std::to_string(s.replenish_count);
  kv["sim.max_transitions"] = std::to_string(s.max_transitions);
  kv["sim.dwell_min"] = std::to_string(s.dwell_min);
  kv["sim.dwell_max"] = std::to_string(s.dwell_max);
  kv["sim.horizon_steps"] = std::to_string(s.horizon_steps);
  kv["sim.group_count"] = std::to_string(s.group_count);
  kv["sim.group_quotas"] = join(s.group_quotas);
  const auto& p = s.params_for(0);
  kv["model.omega"] = format_double(p.omega);
  kv["model.k"] = format_double(p.k);
  kv["model.lambda"] = format_double(p.lambda);
  {
    std::ostringstream d;
    for (std::size_t r = 0; r < s.graph.distance.rows(); ++r) {
      if (r) d << ';';
      d << join(std::vector<double>(s.graph.distance.row(r).begin(), s.graph.distance.row(r).end()));
    }
    kv["model.distance"] = d.str();
  }
  for (std::size_t g = 0; g < s.group_count; ++g) {
    auto tr = cfg.truth.graph.attractiveness.row(g);
    auto ar = cfg.assim.graph.attractiveness.row(g);
    kv["truth.attractiveness." + std::to_string(g)] = join(std::vector<double>(tr.begin(), tr.end()));
    kv["assim.attractiveness." + std::to_string(g)] = join(std::vector<double>(ar.begin(), ar.end()));
  }
  kv["assim.particles"] = std::to_string(cfg.assimilation.particles);
  kv["pool.ratios"] = join(cfg.pool_ratios);
  kv["pool.size"] = std::to_string(cfg.pool_size);
  kv["experiment.replicates"] = std::to_string(cfg.replicate_count);
  kv["experiment.base_seed"] = std::to_string(cfg.base_seed);
  {
    std::vector<int> cs;
    for (auto c : cfg.cases) cs.push_back(static_cast<int>(c));
    kv["experiment.cases"] = join(cs);
  }
  if (!semantic_only) {
    kv["experiment.output_dir"] = cfg.output_dir;
    kv["experiment.jobs"] = std::to_string(cfg.jobs);
  }
  kv["metrics.ngram_n"] = std::to_string(cfg.ngram_n);
  kv["metrics.top_k"] = std::to_string(cfg.top_k);
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  kv["flags.weight_accumulation"] = b(cfg.assimilation.weight_accumulation);
  kv["flags.explicit_resample"] = b(cfg.assimilation.explicit_resample);
  kv["flags.random_baseline"] = b(cfg.assimilation.random_baseline);
  kv["flags.filter_moves"] = b(cfg.assimilation.filter_moves);
  kv["flags.weighted_placement"] = b(cfg.assimilation.weighted_placement);
  kv["flags.allow_self_transition"] = b(s.allow_self_transition);
  kv["flags.count_spawn_as_inflow"] = b(cfg.count_spawn_as_inflow);

  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

}  // namespace flowda
