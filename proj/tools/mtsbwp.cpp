// mtsbwp command line: dimension and validate bandwidth profiles, run fluid
// simulations (single scenarios or experiment grids), compare result
// summaries, and mark packet traces.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtsbwp/experiment.hpp"
#include "mtsbwp/fluid.hpp"
#include "mtsbwp/packet.hpp"
#include "mtsbwp/profile.hpp"
#include "mtsbwp/stats.hpp"
#include "mtsbwp/traffic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitPartial = 3;

std::string base_dir_of(const std::string& path) {
  const fs::path p(path);
  const fs::path dir = p.parent_path();
  return dir.empty() ? std::string(".") : dir.string();
}

void print_report(const mtsbwp::ValidationReport& rep, std::ostream& out) {
  for (const auto& f : rep.findings)
    out << (f.severity == mtsbwp::Severity::error ? "error" : "warning") << " [" << f.rule
        << "] " << f.message << "\n";
  if (rep.ok()) out << "profile ok\n";
}

json report_to_json(const mtsbwp::ValidationReport& rep) {
  json findings = json::array();
  for (const auto& f : rep.findings)
    findings.push_back({{"severity", f.severity == mtsbwp::Severity::error ? "error" : "warning"},
                        {"rule", f.rule},
                        {"message", f.message}});
  return findings;
}

int cmd_dimension(const std::string& req_path, const std::vector<double>& trtcm,
                  std::optional<double> mtu, std::optional<double> rtt,
                  const std::string& outdir) {
  fs::create_directories(outdir);
  mtsbwp::ProfileConfig profile;
  json report;
  double capacity = 0.0;
  int nodes = 0;
  if (!trtcm.empty()) {
    profile = mtsbwp::trtcm_profile(trtcm[0], trtcm[1], trtcm.size() > 2 ? trtcm[2] : 0.0,
                                    trtcm.size() > 3 ? trtcm[3] : 0.0);
    report["source"] = "trtcm";
  } else {
    const json rj = mtsbwp::load_json_file(req_path);
    const mtsbwp::Requirements req = mtsbwp::requirements_from_json(rj);
    capacity = req.capacity;
    nodes = req.nodes;
    try {
      profile = mtsbwp::dimension_profile(req);
    } catch (const std::exception& e) {
      std::cerr << "error [dimensioning] " << e.what() << "\n";
      return kExitValidation;
    }
    report["source"] = "requirements";
    report["capacity_gbps"] = capacity;
    report["nodes"] = nodes;
    if (req.n_fs() >= 2) {
      const double bw2p = mtsbwp::adjusted_flow_speed(req.download[0], req.download[1],
                                                      profile.ts[1], profile.ts[2]);
      report["adjusted_flow_speed_gbps"] = bw2p;
    }
  }
  mtsbwp::save_json_file(outdir + "/profile.json", mtsbwp::profile_to_json(profile));
  if (mtu && rtt) {
    mtsbwp::ProfileConfig pkt = profile;
    pkt.bs = mtsbwp::packet_bucket_sizes(profile.bs, profile.r, *mtu, *rtt);
    mtsbwp::save_json_file(outdir + "/profile_packet.json", mtsbwp::profile_to_json(pkt));
  }
  if (capacity > 0 && nodes > 0) {
    const auto rep = mtsbwp::validate(profile, capacity, nodes);
    report["findings"] = report_to_json(rep);
    mtsbwp::save_json_file(outdir + "/report.json", report);
    print_report(rep, std::cout);
    if (rep.has_errors()) return kExitValidation;
  } else {
    report["findings"] = json::array();
    mtsbwp::save_json_file(outdir + "/report.json", report);
  }
  std::cout << "wrote " << outdir << "/profile.json\n";
  return 0;
}

int cmd_validate(const std::string& profile_path, double capacity, int nodes) {
  const auto profile = mtsbwp::profile_from_json(mtsbwp::load_json_file(profile_path));
  const auto rep = mtsbwp::validate(profile, capacity, nodes);
  print_report(rep, std::cout);
  return rep.has_errors() ? kExitValidation : 0;
}

int run_scenario_file(const std::string& scenario_path, const std::string& outdir) {
  const json j = mtsbwp::load_json_file(scenario_path);
  const mtsbwp::Scenario sc = mtsbwp::scenario_from_json(j, base_dir_of(scenario_path));
  const mtsbwp::SimTrace tr = mtsbwp::run_scenario(sc);
  fs::create_directories(outdir);
  {
    std::ofstream out(outdir + "/trace.csv");
    mtsbwp::write_trace_csv(out, tr);
  }
  mtsbwp::save_json_file(outdir + "/summary.json", mtsbwp::trace_summary_json(tr));
  std::cout << "wrote " << outdir << "/trace.csv (" << tr.records.size() << " events)\n";
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& scenario_path, bool seeds_given,
            const std::vector<std::uint64_t>& seeds, std::optional<double> horizon,
            std::optional<double> warmup, const std::string& outdir, int jobs) {
  if (!scenario_path.empty()) return run_scenario_file(scenario_path, outdir);

  const json j = mtsbwp::load_json_file(config_path);
  mtsbwp::ExperimentConfig cfg = mtsbwp::experiment_from_json(j, base_dir_of(config_path));
  if (seeds_given) cfg.seeds = seeds;
  if (horizon) cfg.horizon = *horizon;
  if (warmup) cfg.warmup = *warmup;
  cfg.check();

  const auto cells = mtsbwp::run_cells(cfg, jobs);
  fs::create_directories(outdir + "/cells");
  int failures = 0;
  for (const auto& cell : cells) {
    std::ostringstream name;
    name << cell.key.setup << "_" << mtsbwp::fmt_num(cell.key.param) << "_" << cell.key.policy
         << "_seed" << cell.key.seed;
    if (!cell.error.empty()) {
      ++failures;
      std::cerr << "cell " << name.str() << " failed: " << cell.error << "\n";
      continue;
    }
    std::ofstream out(outdir + "/cells/" + name.str() + ".csv");
    mtsbwp::write_summary_csv(out, mtsbwp::cell_rows(cell, cfg.band_mode));
  }
  const auto rows = mtsbwp::summarize(cells, cfg.band_mode);
  {
    std::ofstream out(outdir + "/summary.csv");
    mtsbwp::write_summary_csv(out, rows);
  }
  for (const auto& policy : cfg.policies) {
    std::vector<mtsbwp::SummaryRow> filtered;
    for (const auto& r : rows)
      if (r.policy == policy.name) filtered.push_back(r);
    std::ofstream out(outdir + "/summary_" + policy.name + ".csv");
    mtsbwp::write_summary_csv(out, filtered);
  }
  std::cout << "ran " << cells.size() << " cells, " << failures << " failed; wrote " << outdir
            << "/summary.csv\n";
  return failures > 0 ? kExitPartial : 0;
}

int cmd_compare(const std::string& a_path, const std::string& b_path, const std::string& out_path) {
  std::ifstream fa(a_path), fb(b_path);
  if (!fa) throw std::runtime_error("cannot open " + a_path);
  if (!fb) throw std::runtime_error("cannot open " + b_path);
  const auto a = mtsbwp::read_summary_csv(fa);
  const auto b = mtsbwp::read_summary_csv(fb);
  const auto res = mtsbwp::compare_summaries(a, b);
  if (!res.missing.empty()) {
    std::cerr << "grids do not match; missing cells:\n";
    for (const auto& m : res.missing) std::cerr << "  " << m << "\n";
    return kExitValidation;
  }
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  mtsbwp::write_compare_csv(out, res.rows);
  std::cout << "wrote " << out_path << " (" << res.rows.size() << " rows)\n";
  return 0;
}

int cmd_mark(const std::string& profile_path, const std::string& packets_path,
             const std::string& out_path) {
  const auto profile = mtsbwp::profile_from_json(mtsbwp::load_json_file(profile_path));
  std::ifstream in(packets_path);
  if (!in) throw std::runtime_error("cannot open " + packets_path);
  auto packets = mtsbwp::read_packet_csv(in);
  mtsbwp::MarkerState marker(profile);
  for (auto& p : packets) p.dp = marker.mark(p.size_bytes, p.arrival);
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  mtsbwp::write_packet_csv(out, packets);
  std::cout << "marked " << packets.size() << " packets -> " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-timescale bandwidth profile toolkit"};
  app.require_subcommand(1);

  // dimension
  std::string req_path, outdir = ".";
  std::vector<double> trtcm;
  std::optional<double> mtu, rtt;
  auto* dim = app.add_subcommand("dimension", "dimension a profile from requirements");
  auto* req_opt = dim->add_option("--requirements", req_path, "requirements JSON file");
  auto* trtcm_opt =
      dim->add_option("--trtcm", trtcm, "trTCM baseline: CIR EIR [CBS EBS]")->expected(2, 4);
  dim->add_option("--mtu", mtu, "MTU in bytes; with --rtt also emits packet bucket sizes");
  dim->add_option("--rtt", rtt, "RTT in seconds");
  dim->add_option("-o,--out", outdir, "output directory");
  req_opt->excludes(trtcm_opt);

  // validate
  std::string profile_path;
  double capacity = 10.0;
  int nodes = 5;
  auto* val = app.add_subcommand("validate", "validate a profile file");
  val->add_option("--profile", profile_path, "profile JSON file")->required();
  val->add_option("--capacity", capacity, "bottleneck capacity [Gbps]");
  val->add_option("--nodes", nodes, "number of nodes");

  // run
  std::string config_path, scenario_path, run_out = "out";
  std::vector<std::uint64_t> seeds;
  std::optional<double> horizon, warmup;
  int jobs = static_cast<int>(std::thread::hardware_concurrency());
  auto* run = app.add_subcommand("run", "run an experiment grid or a single scenario");
  auto* cfg_opt = run->add_option("--config", config_path, "experiment config JSON");
  auto* sc_opt = run->add_option("--scenario", scenario_path, "scenario JSON (single run)");
  run->add_option("--seeds", seeds, "seed list override")->delimiter(',');
  run->add_option("--horizon", horizon, "horizon override [s]");
  run->add_option("--warmup", warmup, "warmup override [s]");
  run->add_option("--jobs", jobs, "parallel cells");
  run->add_option("-o,--out", run_out, "output directory");
  cfg_opt->excludes(sc_opt);

  // compare
  std::string cmp_a, cmp_b, cmp_out = "compare.csv";
  auto* cmp = app.add_subcommand("compare", "delta report between two summary CSVs (A - B)");
  cmp->add_option("a", cmp_a, "summary CSV A")->required();
  cmp->add_option("b", cmp_b, "summary CSV B")->required();
  cmp->add_option("-o,--out", cmp_out, "output CSV");

  // mark
  std::string mark_profile, mark_packets, mark_out = "marked.csv";
  auto* mark = app.add_subcommand("mark", "mark a packet trace with drop precedences");
  mark->add_option("--profile", mark_profile, "profile JSON (packet bucket sizes)")->required();
  mark->add_option("--packets", mark_packets, "packet CSV: arrival_time_s,size_bytes")->required();
  mark->add_option("-o,--out", mark_out, "output CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (dim->parsed()) {
      if (req_path.empty() && trtcm.empty())
        throw CLI::ValidationError("dimension", "need --requirements or --trtcm");
      return cmd_dimension(req_path, trtcm, mtu, rtt, outdir);
    }
    if (val->parsed()) return cmd_validate(profile_path, capacity, nodes);
    if (run->parsed()) {
      if (config_path.empty() && scenario_path.empty())
        throw CLI::ValidationError("run", "need --config or --scenario");
      return cmd_run(config_path, scenario_path, run->count("--seeds") > 0, seeds, horizon,
                     warmup, run_out, jobs);
    }
    if (cmp->parsed()) return cmd_compare(cmp_a, cmp_b, cmp_out);
    if (mark->parsed()) return cmd_mark(mark_profile, mark_packets, mark_out);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
