#pragma once

// Experiment grid driver. A cell is one (setup, parameter, policy, seed)
// simulation; the traffic depends on everything but the policy, so competing
// policies see identical arrival streams. Cells run on a small thread pool;
// results are assembled in configuration order, which keeps all outputs
// byte-deterministic.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fluid.hpp"
#include "io_util.hpp"
#include "profile.hpp"
#include "stats.hpp"
#include "traffic.hpp"

namespace mtsbwp {

struct PolicySpec {
  std::string name;
  ProfileConfig profile;
};

struct ExperimentConfig {
  double capacity = 10.0;
  int nodes = 5;
  int f_max = 20;
  double horizon = 600.0;
  double warmup = 300.0;
  std::vector<std::uint64_t> seeds;
  std::vector<PolicySpec> policies;
  struct Grid {
    std::string setup;
    std::vector<double> params;
  };
  std::vector<Grid> grids;
  BandMode band_mode = BandMode::percentile;

  void check() const {
    if (seeds.empty()) throw std::invalid_argument("experiment: empty seed list");
    if (policies.empty()) throw std::invalid_argument("experiment: no policies");
    if (grids.empty()) throw std::invalid_argument("experiment: no setups");
    if (!(horizon > warmup)) throw std::invalid_argument("experiment: horizon must exceed warmup");
    for (const auto& g : grids)
      if (g.params.empty())
        throw std::invalid_argument("experiment: setup " + g.setup + " has no parameters");
  }
};

struct CellKey {
  std::string setup;
  double param = 0.0;
  std::string policy;
  std::uint64_t seed = 0;
};

struct MetricSamples {
  std::string node_class;  // "low" | "high"
  std::string metric;      // "node_bw" | "flow_bw_small" | ...
  std::vector<WeightedSample> samples;
};

struct CellResult {
  CellKey key;
  std::vector<MetricSamples> metrics;
  double max_conservation_error = 0.0;
  std::string error;  // nonempty when the cell failed
};

struct SummaryRow {
  std::string setup;
  std::string param;  // textual key, fmt_num of the parameter
  std::string policy;
  std::string node_class;
  std::string metric;
  double mean = 0.0, p10 = 0.0, p90 = 0.0;
  std::int64_t samples = 0;
};

inline std::vector<std::string> size_class_labels(std::size_t count) {
  if (count == 2) return {"flow_bw_small", "flow_bw_large"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back("flow_bw_fs" + std::to_string(i + 1));
  return out;
}

inline CellResult run_cell(const ExperimentConfig& cfg, const SetupSpec& setup,
                           const PolicySpec& policy, std::uint64_t seed) {
  CellResult res;
  res.key = {setup.name, /*param*/ 0.0, policy.name, seed};
  const std::vector<TrafficSpec> specs = build_setup(setup, seed);
  std::vector<Arrival> arrivals;
  for (int node = 0; node < setup.nodes; ++node) {
    auto a = generate(specs[node], node, cfg.horizon);
    arrivals.insert(arrivals.end(), a.begin(), a.end());
  }
  FluidEngine eng(policy.profile, cfg.capacity, cfg.nodes, cfg.f_max);
  eng.set_arrivals(std::move(arrivals));
  eng.run_until(cfg.horizon);
  const SimTrace tr = eng.take_trace();
  res.max_conservation_error = tr.max_conservation_error;

  std::vector<int> low, high;
  for (int node = 0; node < setup.nodes; ++node)
    (node < setup.n_low ? low : high).push_back(node);

  std::vector<double> classes;
  for (const SizeProb& sp : specs[0].sizes) classes.push_back(sp.size);
  std::sort(classes.begin(), classes.end());
  const std::vector<std::string> labels = size_class_labels(classes.size());

  const std::vector<std::pair<std::string, std::vector<int>>> node_groups = {{"low", low},
                                                                             {"high", high}};
  for (const auto& [cls_name, group] : node_groups) {
    if (group.empty()) continue;
    res.metrics.push_back({cls_name, "node_bw", node_bandwidth_samples(tr, group, cfg.warmup)});
    for (std::size_t k = 0; k < classes.size(); ++k)
      res.metrics.push_back(
          {cls_name, labels[k], flow_bandwidth_samples(tr, classes[k], group, cfg.warmup)});
  }
  return res;
}

// All cells of the grid, in configuration order. jobs <= 1 runs inline.
inline std::vector<CellResult> run_cells(const ExperimentConfig& cfg, int jobs = 1) {
  cfg.check();
  struct Cell {
    SetupSpec setup;
    double param;
    const PolicySpec* policy;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const auto& grid : cfg.grids)
    for (double param : grid.params) {
      const SetupSpec setup = make_setup(grid.setup, param, cfg.capacity, cfg.nodes);
      for (const auto& policy : cfg.policies)
        for (std::uint64_t seed : cfg.seeds) cells.push_back({setup, param, &policy, seed});
    }

  std::vector<CellResult> results(cells.size());
  auto work = [&](std::size_t i) {
    try {
      results[i] = run_cell(cfg, cells[i].setup, *cells[i].policy, cells[i].seed);
    } catch (const std::exception& e) {
      results[i].error = e.what();
    }
    results[i].key = {cells[i].setup.name, cells[i].param, cells[i].policy->name,
                      cells[i].seed};
  };

  if (jobs <= 1 || cells.size() <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1)) work(i);
    };
    std::vector<std::thread> pool;
    const int k = std::min<int>(jobs, static_cast<int>(cells.size()));
    for (int i = 0; i < k; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return results;
}

// Seeds pooled per (setup, param, policy): samples are concatenated in seed
// order, then banded.
inline std::vector<SummaryRow> summarize(const std::vector<CellResult>& cells,
                                         BandMode mode = BandMode::percentile) {
  std::vector<SummaryRow> rows;
  std::vector<std::string> order;  // group keys, first-seen order
  std::map<std::string, std::map<std::pair<std::string, std::string>,
                                 std::vector<WeightedSample>>> groups;
  std::map<std::string, const CellResult*> reps;
  for (const CellResult& cell : cells) {
    if (!cell.error.empty()) continue;
    const std::string key = cell.key.setup + "\t" + fmt_num(cell.key.param) + "\t" +
                            cell.key.policy;
    if (!groups.count(key)) order.push_back(key);
    reps[key] = &cell;
    auto& g = groups[key];
    for (const MetricSamples& m : cell.metrics) {
      auto& dst = g[{m.node_class, m.metric}];
      dst.insert(dst.end(), m.samples.begin(), m.samples.end());
    }
  }
  for (const std::string& key : order) {
    std::istringstream is(key);
    std::string setup, param, policy;
    std::getline(is, setup, '\t');
    std::getline(is, param, '\t');
    std::getline(is, policy, '\t');
    // metric order as produced by run_cell
    for (const MetricSamples& m : reps[key]->metrics) {
      const auto& samples = groups[key][{m.node_class, m.metric}];
      const auto band = weighted_band(samples, mode);
      if (!band) continue;
      rows.push_back({setup, param, policy, m.node_class, m.metric, band->mean, band->worst,
                      band->best, band->samples});
    }
  }
  return rows;
}

inline std::vector<SummaryRow> cell_rows(const CellResult& cell,
                                         BandMode mode = BandMode::percentile) {
  std::vector<SummaryRow> rows;
  for (const MetricSamples& m : cell.metrics) {
    const auto band = weighted_band(m.samples, mode);
    if (!band) continue;
    rows.push_back({cell.key.setup, fmt_num(cell.key.param), cell.key.policy, m.node_class,
                    m.metric, band->mean, band->worst, band->best, band->samples});
  }
  return rows;
}

inline void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "setup,param,policy,node_class,metric,mean,p10,p90,samples\n";
  for (const SummaryRow& r : rows)
    out << r.setup << "," << r.param << "," << r.policy << "," << r.node_class << ","
        << r.metric << "," << fmt_num(r.mean) << "," << fmt_num(r.p10) << ","
        << fmt_num(r.p90) << "," << r.samples << "\n";
}

inline std::vector<SummaryRow> read_summary_csv(std::istream& in) {
  std::vector<SummaryRow> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("setup,", 0) == 0) continue;
    }
    const auto cells = split_csv_line(line);
    if (cells.size() < 9) throw std::runtime_error("summary csv: expected 9 columns");
    rows.push_back({cells[0], cells[1], cells[2], cells[3], cells[4], std::stod(cells[5]),
                    std::stod(cells[6]), std::stod(cells[7]), std::stoll(cells[8])});
  }
  return rows;
}

struct CompareRow {
  std::string setup, param, node_class, metric;
  double d_mean = 0.0, d_p10 = 0.0, d_p90 = 0.0;
};

struct CompareResult {
  std::vector<CompareRow> rows;
  std::vector<std::string> missing;  // cells present on one side only
};

// Join on (setup, param, node_class, metric); deltas are A minus B.
inline CompareResult compare_summaries(const std::vector<SummaryRow>& a,
                                       const std::vector<SummaryRow>& b) {
  auto key = [](const SummaryRow& r) {
    return r.setup + "," + r.param + "," + r.node_class + "," + r.metric;
  };
  std::map<std::string, const SummaryRow*> bm;
  for (const SummaryRow& r : b) bm[key(r)] = &r;
  CompareResult res;
  std::map<std::string, bool> seen;
  for (const SummaryRow& r : a) {
    const std::string k = key(r);
    seen[k] = true;
    const auto it = bm.find(k);
    if (it == bm.end()) {
      res.missing.push_back(k + " (only in A)");
      continue;
    }
    res.rows.push_back({r.setup, r.param, r.node_class, r.metric, r.mean - it->second->mean,
                        r.p10 - it->second->p10, r.p90 - it->second->p90});
  }
  for (const SummaryRow& r : b)
    if (!seen.count(key(r))) res.missing.push_back(key(r) + " (only in B)");
  return res;
}

inline void write_compare_csv(std::ostream& out, const std::vector<CompareRow>& rows) {
  out << "setup,param,node_class,metric,d_mean,d_p10,d_p90\n";
  for (const CompareRow& r : rows)
    out << r.setup << "," << r.param << "," << r.node_class << "," << r.metric << ","
        << fmt_num(r.d_mean) << "," << fmt_num(r.d_p10) << "," << fmt_num(r.d_p90) << "\n";
}

// Policy profiles come inline, from a profile file, from a requirements
// file/object ("requirements"), or as a trTCM shorthand ("trtcm").
inline ProfileConfig profile_from_source(const nlohmann::json& j, const std::string& base_dir) {
  auto resolve = [&base_dir](std::string path) {
    if (!path.empty() && path[0] != '/') path = base_dir + "/" + path;
    return path;
  };
  if (j.is_string()) return profile_from_json(load_json_file(resolve(j.get<std::string>())));
  if (j.contains("trtcm")) {
    const auto& t = j.at("trtcm");
    return trtcm_profile(t.at("cir").get<double>(), t.at("eir").get<double>(),
                         t.value("cbs", 0.0), t.value("ebs", 0.0));
  }
  if (j.contains("requirements")) {
    const auto& r = j.at("requirements");
    const nlohmann::json rj = r.is_string() ? load_json_file(resolve(r.get<std::string>())) : r;
    return dimension_profile(requirements_from_json(rj));
  }
  if (j.contains("profile")) return profile_from_source(j.at("profile"), base_dir);
  return profile_from_json(j);
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j,
                                             const std::string& base_dir = ".") {
  ExperimentConfig cfg;
  cfg.capacity = j.value("capacity_gbps", 10.0);
  cfg.nodes = j.value("nodes", 5);
  cfg.f_max = j.value("f_max", 20);
  cfg.horizon = j.value("horizon_s", 600.0);
  cfg.warmup = j.value("warmup_s", 300.0);
  cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  for (const auto& p : j.at("policies"))
    cfg.policies.push_back(
        {p.at("name").get<std::string>(), profile_from_source(p, base_dir)});
  for (const auto& g : j.at("setups"))
    cfg.grids.push_back(
        {g.at("name").get<std::string>(), g.at("params").get<std::vector<double>>()});
  if (j.contains("band_mode")) {
    const std::string m = j.at("band_mode").get<std::string>();
    if (m == "percentile")
      cfg.band_mode = BandMode::percentile;
    else if (m == "decile_mean")
      cfg.band_mode = BandMode::decile_mean;
    else
      throw std::invalid_argument("experiment: unknown band_mode " + m);
  }
  cfg.check();
  return cfg;
}

}  // namespace mtsbwp
