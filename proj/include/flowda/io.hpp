#pragma once

// CSV products exchanged between truth, assimilation and evaluation runs.
// All files are UTF-8, comma separated, with a header row.

#include <openssl/evp.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "flowda/assimilation.hpp"
#include "flowda/config.hpp"
#include "flowda/metrics.hpp"
#include "flowda/twin.hpp"

namespace flowda::io {

namespace fs = std::filesystem;

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw Error(ErrorKind::output_unwritable, "cannot create output directory '" + dir.string() + "'");
}

inline void write_text(const fs::path& path, const std::string& text) {
  ensure_dir(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::output_unwritable, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorKind::output_unwritable, "write failed for '" + path.string() + "'");
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::input_data, "cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

inline std::string file_sha256(const fs::path& path) { return sha256_hex(read_text(path)); }

/// Parsed CSV: header plus rows of raw cells.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline Table read_csv(const fs::path& path) {
  const auto text = read_text(path);
  Table t;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = config_detail::split(line, ',');
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size())
        throw Error(ErrorKind::input_data, path.string() + ": row " + std::to_string(t.rows.size() + 1) +
                                               " has " + std::to_string(cells.size()) + " cells, header has " +
                                               std::to_string(t.header.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw Error(ErrorKind::input_data, path.string() + ": missing header row");
  return t;
}

namespace detail {

inline void expect_header(const Table& t, const fs::path& path, const std::vector<std::string>& prefix) {
  for (std::size_t i = 0; i < prefix.size(); ++i)
    if (i >= t.header.size() || t.header[i] != prefix[i])
      throw Error(ErrorKind::input_data, path.string() + ": unexpected header, column " + std::to_string(i) +
                                             " should be '" + prefix[i] + "'");
}

template <class T>
T cell(const std::string& s, const fs::path& path) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty())
    throw Error(ErrorKind::input_data, path.string() + ": cannot parse '" + s + "'");
  return v;
}

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace detail

// --- observations ----------------------------------------------------------

inline std::string obs_counts_csv(const ObservationSeries& obs) {
  std::string out = "step,store,count\n";
  for (const auto& r : obs)
    for (std::size_t j = 0; j < r.inflow.size(); ++j)
      out += std::to_string(r.step) + "," + std::to_string(j) + "," + std::to_string(r.inflow[j]) + "\n";
  return out;
}

inline std::string obs_counts_attr_csv(const ObservationSeries& obs) {
  std::string out = "step,attr,store,count\n";
  for (const auto& r : obs)
    for (std::size_t g = 0; g < r.inflow_by_attr.rows(); ++g)
      for (std::size_t j = 0; j < r.inflow_by_attr.cols(); ++j)
        out += std::to_string(r.step) + "," + std::to_string(g) + "," + std::to_string(j) + "," +
               std::to_string(r.inflow_by_attr(g, j)) + "\n";
  return out;
}

/// Reads obs_counts.csv and obs_counts_attr.csv from `dir`.
inline ObservationSeries read_observations(const fs::path& dir, std::size_t groups, std::size_t stores) {
  const auto p1 = dir / "obs_counts.csv";
  const auto p2 = dir / "obs_counts_attr.csv";
  const auto counts = read_csv(p1);
  const auto by_attr = read_csv(p2);
  detail::expect_header(counts, p1, {"step", "store", "count"});
  detail::expect_header(by_attr, p2, {"step", "attr", "store", "count"});

  ObservationSeries obs;
  auto record = [&](std::size_t step) -> ObservationRecord& {
    while (obs.size() <= step) obs.emplace_back(obs.size(), groups, stores);
    return obs[step];
  };
  for (const auto& row : counts.rows) {
    const auto step = detail::cell<std::size_t>(row[0], p1);
    const auto store = detail::cell<std::size_t>(row[1], p1);
    if (store >= stores) throw Error(ErrorKind::input_data, p1.string() + ": store index out of range");
    record(step).inflow[store] = detail::cell<std::int64_t>(row[2], p1);
  }
  for (const auto& row : by_attr.rows) {
    const auto step = detail::cell<std::size_t>(row[0], p2);
    const auto g = detail::cell<std::size_t>(row[1], p2);
    const auto store = detail::cell<std::size_t>(row[2], p2);
    if (store >= stores || g >= groups)
      throw Error(ErrorKind::input_data, p2.string() + ": attr or store index out of range");
    record(step).inflow_by_attr(g, store) = detail::cell<std::int64_t>(row[3], p2);
  }
  for (const auto& r : obs)
    if (!r.marginals_consistent())
      throw Error(ErrorKind::input_data, "observation step " + std::to_string(r.step) +
                                             ": per-attribute counts do not sum to store counts");
  return obs;
}

// --- sequence pool ---------------------------------------------------------

inline std::string sequence_pool_csv(const SequencePool& pool) {
  std::size_t len = 0;
  for (const auto& e : pool.entries) len = std::max(len, e.path.size());
  std::string out = "entry_id,attr";
  for (std::size_t i = 0; i < len; ++i) out += ",s" + std::to_string(i);
  out += "\n";
  for (std::size_t i = 0; i < pool.entries.size(); ++i) {
    const auto& e = pool.entries[i];
    out += std::to_string(i) + "," + std::to_string(e.attr);
    for (std::size_t k = 0; k < len; ++k) out += "," + (k < e.path.size() ? std::to_string(e.path[k]) : std::string());
    out += "\n";
  }
  return out;
}

inline SequencePool read_sequence_pool(const fs::path& path) {
  const auto t = read_csv(path);
  detail::expect_header(t, path, {"entry_id", "attr"});
  SequencePool pool;
  pool.sampling_ratios.clear();
  for (const auto& row : t.rows) {
    PoolEntry e;
    e.attr = detail::cell<std::size_t>(row[1], path);
    for (std::size_t k = 2; k < row.size(); ++k)
      if (!row[k].empty()) e.path.push_back(detail::cell<std::size_t>(row[k], path));
    if (detail::cell<std::size_t>(row[0], path) != pool.entries.size())
      throw Error(ErrorKind::input_data, path.string() + ": entry ids must be 0..n-1 in order");
    pool.entries.push_back(std::move(e));
  }
  pool.pool_size = pool.entries.size();
  return pool;
}

// --- OD matrices -----------------------------------------------------------

inline std::string od_csv(const ODMatrix& od) {
  std::string out = "origin,destination,count\n";
  for (std::size_t o = 0; o < od.rows(); ++o)
    for (std::size_t d = 0; d < od.cols(); ++d)
      out += std::to_string(o) + "," + std::to_string(d) + "," + std::to_string(od(o, d)) + "\n";
  return out;
}

inline std::string mean_od_csv(const MeanODMatrix& od) {
  std::string out = "origin,destination,mean\n";
  for (std::size_t o = 0; o < od.rows(); ++o)
    for (std::size_t d = 0; d < od.cols(); ++d)
      out += std::to_string(o) + "," + std::to_string(d) + "," + detail::fixed6(od(o, d)) + "\n";
  return out;
}

inline ODMatrix read_od(const fs::path& path, std::size_t stores) {
  const auto t = read_csv(path);
  detail::expect_header(t, path, {"origin", "destination", "count"});
  ODMatrix od(stores, stores, 0);
  for (const auto& row : t.rows) {
    const auto o = detail::cell<std::size_t>(row[0], path);
    const auto d = detail::cell<std::size_t>(row[1], path);
    if (o >= stores || d >= stores) throw Error(ErrorKind::input_data, path.string() + ": store index out of range");
    od(o, d) = detail::cell<std::int64_t>(row[2], path);
  }
  return od;
}

// --- paths -----------------------------------------------------------------

struct PathRecord {
  AgentId agent = 0;
  GroupId group = 0;
  std::optional<std::size_t> sequence_id;
  Path path;
};

inline std::string paths_csv(std::span<const Path> paths, std::span<const GroupId> groups,
                             std::span<const std::optional<std::size_t>> sequence_ids, std::size_t max_len) {
  std::string out = "agent_id,group,sequence_id";
  for (std::size_t i = 0; i < max_len; ++i) out += ",s" + std::to_string(i);
  out += "\n";
  for (std::size_t a = 0; a < paths.size(); ++a) {
    out += std::to_string(a) + "," + std::to_string(groups[a]) + ",";
    if (a < sequence_ids.size() && sequence_ids[a]) out += std::to_string(*sequence_ids[a]);
    for (std::size_t k = 0; k < max_len; ++k)
      out += "," + (k < paths[a].size() ? std::to_string(paths[a][k]) : std::string());
    out += "\n";
  }
  return out;
}

inline std::vector<PathRecord> read_paths(const fs::path& path) {
  const auto t = read_csv(path);
  detail::expect_header(t, path, {"agent_id", "group", "sequence_id"});
  std::vector<PathRecord> out;
  for (const auto& row : t.rows) {
    PathRecord r;
    r.agent = detail::cell<std::size_t>(row[0], path);
    r.group = detail::cell<std::size_t>(row[1], path);
    if (!row[2].empty()) r.sequence_id = detail::cell<std::size_t>(row[2], path);
    for (std::size_t k = 3; k < row.size(); ++k)
      if (!row[k].empty()) r.path.push_back(detail::cell<std::size_t>(row[k], path));
    if (r.path.empty()) throw Error(ErrorKind::input_data, path.string() + ": agent without a path");
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<Path> only_paths(const std::vector<PathRecord>& records) {
  std::vector<Path> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.path);
  return out;
}

}  // namespace flowda::io
