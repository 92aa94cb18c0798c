#pragma once

// Multi-timescale bandwidth profile (MTS-BWP) definition, dimensioning and
// validation.
//
// A profile is an N_DP x N_TS grid of token buckets: bucket (dp, ts) refills
// at rate r(dp, ts) [Gbps] and holds at most bs(dp, ts) [Gbit]. Rates within
// a row never increase with ts. The classic trTCM is the 2x1 special case
// (green = DP 1, yellow = DP 2).
//
// Units throughout: rates in Gbps, data in Gbit, time in seconds. Requirement
// files carry file sizes in GByte and are converted on load.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "matrix.hpp"

namespace mtsbwp {

struct Requirements {
  double capacity = 0.0;           // bottleneck capacity C
  int nodes = 0;                   // N
  std::vector<double> guaranteed;  // G_ts per timescale, non-increasing
  std::vector<double> download;    // BW_k per file size, strictly decreasing
  std::vector<double> file_sizes;  // fs_k [Gbit], strictly increasing
  std::optional<double> ts_last;   // override for the longest timescale [s]

  int n_fs() const { return static_cast<int>(download.size()); }
  int n_ts() const { return static_cast<int>(guaranteed.size()); }
  double nominal_speed() const { return capacity / nodes; }

  // With ts_last set, the largest file size is back-computed so that its
  // download at the slowest predefined speed lasts exactly ts_last.
  std::vector<double> resolved_file_sizes() const {
    std::vector<double> fs = file_sizes;
    if (ts_last && !fs.empty()) fs.back() = *ts_last * download.back();
    return fs;
  }

  void check() const {
    if (!(capacity > 0)) throw std::invalid_argument("requirements: capacity must be positive");
    if (nodes < 1) throw std::invalid_argument("requirements: node count must be at least 1");
    if (download.empty()) throw std::invalid_argument("requirements: no download speeds given");
    if (guaranteed.size() != download.size() + 1)
      throw std::invalid_argument("requirements: need one guaranteed speed per timescale (downloads + 1)");
    if (file_sizes.size() != download.size())
      throw std::invalid_argument("requirements: one file size per download speed");
    for (std::size_t i = 0; i + 1 < guaranteed.size(); ++i)
      if (guaranteed[i] < guaranteed[i + 1])
        throw std::invalid_argument("requirements: guaranteed speeds must be non-increasing");
    for (std::size_t i = 0; i + 1 < download.size(); ++i)
      if (download[i] <= download[i + 1])
        throw std::invalid_argument("requirements: download speeds must be strictly decreasing");
    const std::vector<double> fs = resolved_file_sizes();
    for (std::size_t i = 0; i < fs.size(); ++i) {
      if (fs[i] <= 0) throw std::invalid_argument("requirements: file sizes must be positive");
      if (i + 1 < fs.size() && fs[i] >= fs[i + 1])
        throw std::invalid_argument("requirements: file sizes must be strictly increasing");
    }
    for (double g : guaranteed)
      if (g < 0) throw std::invalid_argument("requirements: negative guaranteed speed");
    const double s_n = nominal_speed();
    if (guaranteed.front() > s_n + 1e-12)
      throw std::invalid_argument("requirements: G1 must not exceed the nominal speed C/N");
    if (download.back() <= s_n)
      throw std::invalid_argument("requirements: the slowest download speed must exceed C/N");
  }
};

struct ProfileConfig {
  Mat r;                   // token rates [Gbps], n_dp x n_ts
  Mat bs;                  // bucket sizes [Gbit], n_dp x n_ts
  std::vector<double> ts;  // timescales [s], ts[0] == 0

  int n_dp() const { return r.rows(); }
  int n_ts() const { return r.cols(); }

  friend bool operator==(const ProfileConfig&, const ProfileConfig&) = default;
};

enum class Severity { error, warning };

struct Finding {
  Severity severity = Severity::error;
  std::string rule;
  std::string message;
};

struct ValidationReport {
  std::vector<Finding> findings;
  bool ok() const { return findings.empty(); }
  bool has_errors() const {
    for (const auto& f : findings)
      if (f.severity == Severity::error) return true;
    return false;
  }
};

// Rate matrix from the requirements. Row 1 carries the guaranteed speeds,
// row 2 tops row 1 up to the predefined download speeds, row 3 closes the
// last column to exactly C/N so a quiet node can regain good history, and
// row 4 keeps the full capacity reachable. Free row-3 entries get C, except
// the one next to the fixed last column, which copies it (keeps the dp-3
// bucket at the longest timescale from dwarfing the others).
inline Mat dimension_rates(const Requirements& req) {
  req.check();
  if (req.nodes < 2)
    throw std::invalid_argument("dimension_rates: needs at least 2 nodes");
  const int n_ts = req.n_ts();
  const int n_fs = req.n_fs();
  const double c = req.capacity;
  const double s_n = req.nominal_speed();
  const double share_rest = (c - req.download[0]) / (req.nodes - 1);

  Mat r(4, n_ts);
  for (int t = 0; t < n_ts; ++t) r(0, t) = req.guaranteed[t];
  for (int t = 0; t < n_fs; ++t) r(1, t) = req.download[t] - req.guaranteed[t];
  r(1, n_ts - 1) = share_rest - req.guaranteed[n_ts - 1];
  r(2, n_ts - 1) = s_n - share_rest;
  for (int t = 0; t + 1 < n_ts; ++t) r(2, t) = c;
  if (n_ts >= 2) r(2, n_ts - 2) = std::min(c, r(2, n_ts - 1));
  for (int t = 0; t < n_ts; ++t) r(3, t) = c;

  for (int dp = 0; dp < 4; ++dp)
    for (int t = 0; t < n_ts; ++t)
      if (r(dp, t) < 0) {
        std::ostringstream os;
        os << "dimension_rates: R[" << dp + 1 << "," << t + 1 << "] = " << r(dp, t)
           << " is negative; requirements infeasible";
        throw std::invalid_argument(os.str());
      }
  for (int dp = 0; dp < 4; ++dp)
    for (int t = 0; t + 1 < n_ts; ++t)
      if (r(dp, t) < r(dp, t + 1) - 1e-12) {
        std::ostringstream os;
        os << "dimension_rates: row " << dp + 1 << " increases at ts " << t + 1
           << "->" << t + 2 << "; requirements infeasible";
        throw std::invalid_argument(os.str());
      }
  return r;
}

// Timescales are the download times of the predefined file sizes, with the
// instantaneous ts = 0 in front.
inline std::vector<double> dimension_timescales(const Requirements& req) {
  req.check();
  const std::vector<double> fs = req.resolved_file_sizes();
  std::vector<double> ts(fs.size() + 1, 0.0);
  for (std::size_t k = 0; k < fs.size(); ++k) ts[k + 1] = fs[k] / req.download[k];
  for (std::size_t k = 0; k + 1 < ts.size(); ++k)
    if (ts[k] >= ts[k + 1])
      throw std::invalid_argument("dimension_timescales: result not strictly increasing");
  return ts;
}

// Bucket sizes chosen such that a previously inactive node transmitting at
// its per-dp bound empties bucket (dp, ts) exactly at time ts.
inline Mat dimension_bucket_sizes(const Mat& r, const std::vector<double>& ts) {
  if (static_cast<int>(ts.size()) != r.cols())
    throw std::invalid_argument("dimension_bucket_sizes: ts length must match rate columns");
  if (ts.empty() || ts[0] != 0.0)
    throw std::invalid_argument("dimension_bucket_sizes: timescales must start at 0");
  for (std::size_t k = 0; k + 1 < ts.size(); ++k)
    if (ts[k] >= ts[k + 1])
      throw std::invalid_argument("dimension_bucket_sizes: timescales must be strictly increasing");

  Mat bs(r.rows(), r.cols(), 0.0);
  for (int dp = 0; dp < r.rows(); ++dp) {
    for (int t = 1; t < r.cols(); ++t) {
      double acc = 0.0;
      for (int k = 1; k <= t; ++k) acc += (ts[k] - ts[k - 1]) * (r(dp, k - 1) - r(dp, t));
      if (acc < -1e-9) {
        std::ostringstream os;
        os << "dimension_bucket_sizes: BS[" << dp + 1 << "," << t + 1
           << "] negative; rate row not non-increasing";
        throw std::invalid_argument(os.str());
      }
      bs(dp, t) = std::max(acc, 0.0);
    }
  }
  return bs;
}

// Peak throughput a single flow of the second file size can see when it is
// served at bw1 until ts2 and at bw2 afterwards, averaged over [0, ts3].
inline double adjusted_flow_speed(double bw1, double bw2, double ts2, double ts3) {
  if (!(ts2 > 0) || !(ts3 > ts2))
    throw std::invalid_argument("adjusted_flow_speed: need ts3 > ts2 > 0");
  return (ts2 * bw1 + (ts3 - ts2) * bw2) / ts3;
}

// Inverse of adjusted_flow_speed in bw2: the mid-timescale download speed
// that turns a flow-throughput target into a maintainable-speed setting.
inline double solve_target_flow_speed(double target, double bw1, double ts2, double ts3) {
  if (!(ts2 > 0) || !(ts3 > ts2))
    throw std::invalid_argument("solve_target_flow_speed: need ts3 > ts2 > 0");
  if (!(target > ts2 * bw1 / ts3))
    throw std::invalid_argument("solve_target_flow_speed: target below the reachable range");
  const double bw2 = (target * ts3 - ts2 * bw1) / (ts3 - ts2);
  if (bw2 > bw1 + 1e-9)
    throw std::invalid_argument("solve_target_flow_speed: target needs a mid-timescale speed above the peak");
  return bw2;
}

// Packet-level bucket sizes: at least one MTU so packets can pass at all,
// and at least one RTT worth of tokens at the bucket's rate.
inline Mat packet_bucket_sizes(const Mat& bs, const Mat& r, double mtu_bytes, double rtt_s) {
  if (bs.rows() != r.rows() || bs.cols() != r.cols())
    throw std::invalid_argument("packet_bucket_sizes: bs and r shapes differ");
  if (!(mtu_bytes > 0)) throw std::invalid_argument("packet_bucket_sizes: MTU must be positive");
  if (rtt_s < 0) throw std::invalid_argument("packet_bucket_sizes: RTT must be non-negative");
  const double mtu_gbit = mtu_bytes * 8e-9;
  Mat out(bs.rows(), bs.cols());
  for (int dp = 0; dp < bs.rows(); ++dp)
    for (int t = 0; t < bs.cols(); ++t)
      out(dp, t) = std::max({bs(dp, t), mtu_gbit, r(dp, t) * rtt_s});
  return out;
}

// The trTCM baseline as a 2-DP x 1-TS profile. Pass zero burst sizes for
// fluid use; real CBS/EBS for the packet marker.
inline ProfileConfig trtcm_profile(double cir, double eir, double cbs = 0.0, double ebs = 0.0) {
  if (cir < 0 || eir < 0 || cbs < 0 || ebs < 0)
    throw std::invalid_argument("trtcm_profile: negative parameter");
  ProfileConfig p;
  p.r = Mat{{cir}, {eir}};
  p.bs = Mat{{cbs}, {ebs}};
  p.ts = {0.0};
  return p;
}

inline ValidationReport validate(const ProfileConfig& p, double capacity, int nodes) {
  ValidationReport rep;
  auto err = [&rep](std::string rule, std::string msg) {
    rep.findings.push_back({Severity::error, std::move(rule), std::move(msg)});
  };
  auto warn = [&rep](std::string rule, std::string msg) {
    rep.findings.push_back({Severity::warning, std::move(rule), std::move(msg)});
  };

  if (p.r.rows() < 1 || p.r.cols() < 1 || p.bs.rows() != p.r.rows() ||
      p.bs.cols() != p.r.cols() || static_cast<int>(p.ts.size()) != p.r.cols()) {
    err("shape", "rate/bucket/timescale dimensions are inconsistent");
    return rep;
  }
  if (!(capacity > 0) || nodes < 1) {
    err("shape", "capacity must be positive and node count at least 1");
    return rep;
  }

  bool ts_ok = p.ts[0] == 0.0;
  for (std::size_t k = 0; k + 1 < p.ts.size(); ++k)
    if (p.ts[k] >= p.ts[k + 1]) ts_ok = false;
  if (!ts_ok) err("ts-monotonic", "timescales must start at 0 and be strictly increasing");

  for (int dp = 0; dp < p.bs.rows(); ++dp)
    for (int t = 0; t < p.bs.cols(); ++t)
      if (p.bs(dp, t) < 0) {
        std::ostringstream os;
        os << "BS[" << dp + 1 << "," << t + 1 << "] is negative";
        err("bs-negative", os.str());
      }

  bool rows_ok = true;
  for (int dp = 0; dp < p.r.rows(); ++dp)
    for (int t = 0; t + 1 < p.r.cols(); ++t)
      if (p.r(dp, t) < p.r(dp, t + 1) - 1e-12) {
        std::ostringstream os;
        os << "row " << dp + 1 << " increases at ts " << t + 1 << "->" << t + 2;
        err("row-monotonic", os.str());
        rows_ok = false;
      }

  const double s_n = capacity / nodes;
  const double tol = 1e-9 * std::max(1.0, s_n);

  // General return rule: some prefix of the last column must sum to exactly
  // C/N, so that a node that stays at its long-term share regains history.
  double cum = 0.0;
  bool return_ok = false;
  for (int dp = 0; dp < p.r.rows(); ++dp) {
    cum += p.r(dp, p.r.cols() - 1);
    if (std::abs(cum - s_n) <= tol) {
      return_ok = true;
      break;
    }
    if (cum > s_n + tol) break;
  }
  if (!return_ok) {
    std::ostringstream os;
    os << "no dp prefix of the last column sums to the nominal speed " << s_n;
    err("return-rule", os.str());
  }

  // Work conservation: the last column bounds every dp's throughput from
  // below regardless of history, so its total must reach the capacity.
  double last_col_sum = 0.0;
  for (int dp = 0; dp < p.r.rows(); ++dp) last_col_sum += p.r(dp, p.r.cols() - 1);
  if (last_col_sum < capacity - 1e-9 * std::max(1.0, capacity)) {
    std::ostringstream os;
    os << "last-column rates sum to " << last_col_sum << " < capacity " << capacity
       << "; an active node may be unable to use the link";
    err("work-conserving", os.str());
  }

  if (p.r(0, 0) > s_n + tol) {
    std::ostringstream os;
    os << "R[1,1] = " << p.r(0, 0) << " exceeds the nominal speed " << s_n
       << "; DP 1 could congest";
    err("guaranteed-speed", os.str());
  }

  for (int dp = 0; dp < p.bs.rows(); ++dp)
    if (p.bs(dp, 0) != 0.0) {
      std::ostringstream os;
      os << "BS[" << dp + 1 << ",1] = " << p.bs(dp, 0)
         << " is nonzero; the fluid engine needs zero-size ts-1 buckets";
      warn("fluid-bs", os.str());
      break;
    }

  if (rows_ok && ts_ok) {
    try {
      const Mat ref = dimension_bucket_sizes(p.r, p.ts);
      int mismatches = 0;
      int first_dp = 0, first_t = 0;
      for (int dp = 0; dp < ref.rows(); ++dp)
        for (int t = 0; t < ref.cols(); ++t)
          if (std::abs(ref(dp, t) - p.bs(dp, t)) >
              1e-6 * std::max(1.0, std::abs(ref(dp, t)))) {
            if (mismatches++ == 0) {
              first_dp = dp;
              first_t = t;
            }
          }
      if (mismatches > 0) {
        std::ostringstream os;
        os << mismatches << " bucket size(s) differ from the dimensioning formula, first at BS["
           << first_dp + 1 << "," << first_t + 1 << "]";
        warn("bs-consistency", os.str());
      }
    } catch (const std::exception&) {
      // unreachable when rows_ok && ts_ok; keep validate total
    }
  }
  return rep;
}

// Full dimensioning pipeline for one node's profile.
inline ProfileConfig dimension_profile(const Requirements& req) {
  ProfileConfig p;
  p.r = dimension_rates(req);
  p.ts = dimension_timescales(req);
  p.bs = dimension_bucket_sizes(p.r, p.ts);
  return p;
}

inline nlohmann::json matrix_to_json(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Mat matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw std::invalid_argument("matrix: expected non-empty array");
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j[0].size());
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (static_cast<int>(j[r].size()) != cols)
      throw std::invalid_argument("matrix: ragged rows");
    for (int c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

inline nlohmann::json profile_to_json(const ProfileConfig& p) {
  return nlohmann::json{{"n_dp", p.n_dp()},
                        {"n_ts", p.n_ts()},
                        {"r", matrix_to_json(p.r)},
                        {"bs", matrix_to_json(p.bs)},
                        {"ts", p.ts}};
}

inline ProfileConfig profile_from_json(const nlohmann::json& j) {
  ProfileConfig p;
  p.r = matrix_from_json(j.at("r"));
  p.bs = matrix_from_json(j.at("bs"));
  p.ts = j.at("ts").get<std::vector<double>>();
  if (j.contains("n_dp") && j.at("n_dp").get<int>() != p.n_dp())
    throw std::invalid_argument("profile: n_dp does not match the rate matrix");
  if (j.contains("n_ts") && j.at("n_ts").get<int>() != p.n_ts())
    throw std::invalid_argument("profile: n_ts does not match the rate matrix");
  if (p.bs.rows() != p.r.rows() || p.bs.cols() != p.r.cols() ||
      p.ts.size() != static_cast<std::size_t>(p.r.cols()))
    throw std::invalid_argument("profile: inconsistent matrix shapes");
  return p;
}

// Requirement files carry file sizes in GByte; everything internal is Gbit.
inline Requirements requirements_from_json(const nlohmann::json& j) {
  Requirements req;
  req.capacity = j.at("capacity_gbps").get<double>();
  req.nodes = j.at("nodes").get<int>();
  req.guaranteed = j.at("guaranteed_gbps").get<std::vector<double>>();
  req.download = j.at("download_gbps").get<std::vector<double>>();
  req.file_sizes = j.at("file_sizes_gbyte").get<std::vector<double>>();
  for (double& fs : req.file_sizes) fs *= 8.0;
  if (j.contains("ts_last_s")) req.ts_last = j.at("ts_last_s").get<double>();
  req.check();
  return req;
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

inline void save_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace mtsbwp
