#pragma once

// Discrete-event fluid simulation of N nodes sharing a bottleneck under a
// common MTS-BWP. Three event kinds exist: flow arrival, flow finish, and a
// token bucket running empty. Between events every rate is constant, so
// token levels and flow remainders move linearly and the next event time is
// exact. The bandwidth allocation is recomputed once per event batch.
//
// An empty bucket never chatters: either its dp is served at exactly the
// bucket rate and it stays empty, or it is served below the rate and refills
// strictly; in the latter case the bound it used to impose is not active, so
// keeping the allocation until the next event is consistent.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "alloc.hpp"
#include "io_util.hpp"
#include "matrix.hpp"
#include "profile.hpp"

namespace mtsbwp {

inline constexpr double kFlowSnap = 1e-9;  // Gbit; remainders at or below are done

enum class EventKind : int { arrival = 0, finish = 1, bucket_empty = 2, init = 3 };

inline const char* event_name(EventKind k) {
  switch (k) {
    case EventKind::arrival: return "arrival";
    case EventKind::finish: return "finish";
    case EventKind::bucket_empty: return "bucket_empty";
    case EventKind::init: return "init";
  }
  return "?";
}

struct Arrival {
  int node = 0;       // 0-based
  double time = 0.0;  // s
  double size = 0.0;  // Gbit
};

struct FlowRecord {
  std::int64_t id = 0;
  int node = 0;
  double arrival = 0.0;
  double size = 0.0;       // infinity for pinned flows
  double remaining = 0.0;  // Gbit

  bool pinned() const { return !std::isfinite(size); }
};

struct CompletedFlow {
  std::int64_t id = 0;
  int node = 0;
  double arrival = 0.0;
  double size = 0.0;
  double finish = 0.0;
};

struct TraceRecord {
  double t = 0.0;
  EventKind kind = EventKind::init;
  int dp_c = 0;
  std::vector<double> th;  // per node
  Mat th_dp;               // n_dp x nodes
  std::vector<int> flows;  // per node
};

struct SimTrace {
  double capacity = 0.0;
  int nodes = 0;
  double horizon = 0.0;
  std::vector<TraceRecord> records;
  std::vector<CompletedFlow> completed;
  std::vector<std::int64_t> discarded_per_node;
  double max_conservation_error = 0.0;  // max |sum th - C| while any node active
};

class FluidEngine {
 public:
  FluidEngine(ProfileConfig profile, double capacity, int nodes, int f_max)
      : prof_(std::move(profile)), c_(capacity), n_(nodes), fmax_(f_max) {
    if (!(capacity > 0)) throw std::invalid_argument("fluid: capacity must be positive");
    if (nodes < 1) throw std::invalid_argument("fluid: need at least one node");
    if (f_max < 1) throw std::invalid_argument("fluid: flow limit must be at least 1");
    if (prof_.r.rows() < 1 || prof_.r.rows() != prof_.bs.rows() ||
        prof_.r.cols() != prof_.bs.cols() ||
        prof_.ts.size() != static_cast<std::size_t>(prof_.r.cols()))
      throw std::invalid_argument("fluid: inconsistent profile shapes");
    for (int dp = 0; dp < prof_.n_dp(); ++dp)
      if (prof_.bs(dp, 0) != 0.0)
        throw std::invalid_argument("fluid: BS[dp,1] must be 0 (zero RTT model)");
    // a full last column guarantees work conservation; anything less is
    // tolerated but no longer asserted
    double last = 0.0;
    for (int dp = 0; dp < prof_.n_dp(); ++dp) last += prof_.r(dp, prof_.n_ts() - 1);
    expect_work_conserving_ = last >= c_ - 1e-9 * std::max(1.0, c_);

    tl_.assign(n_, prof_.bs);  // buckets start full
    flows_.resize(n_);
    alloc_.th.assign(n_, 0.0);
    alloc_.th_dp = Mat(prof_.n_dp(), n_, 0.0);
    trace_.capacity = c_;
    trace_.nodes = n_;
    trace_.discarded_per_node.assign(n_, 0);
  }

  const ProfileConfig& profile() const { return prof_; }
  double capacity() const { return c_; }
  int nodes() const { return n_; }
  double now() const { return t_; }
  double token_level(int node, int dp, int ts) const { return tl_[node](dp, ts); }
  int flow_count(int node) const { return static_cast<int>(flows_[node].size()); }
  const std::vector<FlowRecord>& active_flows(int node) const { return flows_[node]; }
  const AllocationResult& current_allocation() const { return alloc_; }
  const SimTrace& trace() const { return trace_; }
  SimTrace take_trace() { return std::move(trace_); }

  // Scenario hooks; only meaningful before the first run_until call.
  void set_token_level(int node, int dp, int ts, double gbit) {
    check_started("set_token_level");
    check_node(node);
    if (dp < 0 || dp >= prof_.n_dp() || ts < 0 || ts >= prof_.n_ts())
      throw std::invalid_argument("fluid: bucket index out of range");
    tl_[node](dp, ts) = std::clamp(gbit, 0.0, prof_.bs(dp, ts));
  }

  void add_pinned_flows(int node, int count) {
    check_started("add_pinned_flows");
    check_node(node);
    if (count < 0) throw std::invalid_argument("fluid: negative pinned flow count");
    if (static_cast<int>(flows_[node].size()) + count > fmax_)
      throw std::invalid_argument("fluid: pinned flows exceed the flow limit");
    const double inf = std::numeric_limits<double>::infinity();
    for (int i = 0; i < count; ++i)
      flows_[node].push_back({next_id_++, node, t_, inf, inf});
  }

  void set_arrivals(std::vector<Arrival> arrivals) {
    check_started("set_arrivals");
    for (const Arrival& a : arrivals) {
      if (a.node < 0 || a.node >= n_) throw std::invalid_argument("fluid: arrival node out of range");
      if (!(a.size > 0)) throw std::invalid_argument("fluid: arrival size must be positive");
      if (a.time < t_) throw std::invalid_argument("fluid: arrival before the start time");
    }
    std::stable_sort(arrivals.begin(), arrivals.end(),
                     [](const Arrival& a, const Arrival& b) {
                       return a.time != b.time ? a.time < b.time : a.node < b.node;
                     });
    arrivals_ = std::move(arrivals);
    arr_idx_ = 0;
  }

  // Time and kind of the next event strictly after now; nullopt when the
  // system has run dry.
  std::optional<std::pair<double, EventKind>> peek_next_event() const {
    double best_t = std::numeric_limits<double>::infinity();
    EventKind best_k = EventKind::arrival;
    auto consider = [&](double t, EventKind k) {
      if (!std::isfinite(t)) return;
      if (!std::isfinite(best_t)) {
        best_t = t;
        best_k = k;
        return;
      }
      const double tol = 1e-12 * std::max(1.0, std::abs(t));
      if (t < best_t - tol) {
        best_t = t;
        best_k = k;
      } else if (t <= best_t + tol && static_cast<int>(k) < static_cast<int>(best_k)) {
        best_t = std::min(best_t, t);
        best_k = k;
      }
    };
    if (arr_idx_ < arrivals_.size()) consider(arrivals_[arr_idx_].time, EventKind::arrival);
    for (int node = 0; node < n_; ++node) {
      const int f = static_cast<int>(flows_[node].size());
      if (f == 0) continue;
      const double rate = alloc_.th[node] / f;
      if (rate <= kRateTol) continue;
      for (const FlowRecord& fl : flows_[node])
        if (!fl.pinned()) consider(t_ + fl.remaining / rate, EventKind::finish);
    }
    for (int node = 0; node < n_; ++node)
      for (int dp = 0; dp < prof_.n_dp(); ++dp)
        for (int t = 0; t < prof_.n_ts(); ++t) {
          const double level = tl_[node](dp, t);
          if (level <= 0) continue;
          const double drain = alloc_.th_dp(dp, node) - prof_.r(dp, t);
          if (drain <= kRateTol) continue;
          consider(t_ + level / drain, EventKind::bucket_empty);
        }
    if (!std::isfinite(best_t)) return std::nullopt;
    return std::make_pair(best_t, best_k);
  }

  void run_until(double t_end) {
    if (t_end < t_) throw std::invalid_argument("fluid: run_until into the past");
    trace_.horizon = std::max(trace_.horizon, t_end);
    if (!started_) {
      started_ = true;
      const bool had_arrivals = apply_arrivals(t_);
      apply_finishes(t_);
      if (total_flows() > 0)
        recompute(had_arrivals ? EventKind::arrival : EventKind::init);
    }
    while (true) {
      const auto ev = peek_next_event();
      if (!ev || ev->first > t_end) {
        advance_to(t_end);
        t_ = t_end;
        break;
      }
      const bool moved = ev->first > t_;
      advance_to(ev->first);
      t_ = ev->first;
      bool swept = false;
      if (!moved) swept = sweep_residues();  // event time collided with now
      const bool had_arrivals = apply_arrivals(t_);
      const bool had_finishes = apply_finishes(t_);
      if (!moved && !swept && !had_arrivals && !had_finishes)
        throw std::runtime_error("fluid: no progress at t = " + fmt_num(t_));
      EventKind kind = ev->second;
      if (had_arrivals)
        kind = EventKind::arrival;
      else if (had_finishes)
        kind = EventKind::finish;
      recompute(kind);
    }
  }

 private:
  void check_started(const char* what) const {
    if (started_)
      throw std::logic_error(std::string("fluid: ") + what + " after the run started");
  }

  void check_node(int node) const {
    if (node < 0 || node >= n_) throw std::invalid_argument("fluid: node index out of range");
  }

  int total_flows() const {
    int s = 0;
    for (const auto& v : flows_) s += static_cast<int>(v.size());
    return s;
  }

  // Linear motion of token levels and flow remainders over [t_, t].
  void advance_to(double t) {
    const double dt = t - t_;
    if (dt <= 0) return;
    for (int node = 0; node < n_; ++node) {
      const int f = static_cast<int>(flows_[node].size());
      if (f > 0) {
        const double rate = alloc_.th[node] / f;
        for (FlowRecord& fl : flows_[node]) {
          if (fl.pinned()) continue;
          fl.remaining -= rate * dt;
          if (fl.remaining < -1e-6)
            throw std::runtime_error("fluid: flow served past its size (missed finish event)");
          fl.remaining = std::max(fl.remaining, 0.0);
        }
      }
      Mat& tl = tl_[node];
      for (int dp = 0; dp < prof_.n_dp(); ++dp)
        for (int ts = 0; ts < prof_.n_ts(); ++ts) {
          const double bsv = prof_.bs(dp, ts);
          if (bsv <= 0) continue;  // permanent rate limiter
          const double net = prof_.r(dp, ts) - alloc_.th_dp(dp, node);
          double level = std::clamp(tl(dp, ts) + net * dt, 0.0, bsv);
          if (level <= kTokenSnap) level = 0.0;
          tl(dp, ts) = level;
        }
    }
  }

  // Zeroes residues too small to drain within one representable time step.
  bool sweep_residues() {
    const double dt_min = 4e-12 * std::max(1.0, t_);
    bool swept = false;
    for (int node = 0; node < n_; ++node) {
      const int f = static_cast<int>(flows_[node].size());
      if (f > 0) {
        const double rate = alloc_.th[node] / f;
        if (rate > kRateTol)
          for (FlowRecord& fl : flows_[node])
            if (!fl.pinned() && fl.remaining > 0 && fl.remaining / rate <= dt_min) {
              fl.remaining = 0.0;
              swept = true;
            }
      }
      for (int dp = 0; dp < prof_.n_dp(); ++dp)
        for (int ts = 0; ts < prof_.n_ts(); ++ts) {
          const double level = tl_[node](dp, ts);
          if (level <= 0) continue;
          const double drain = alloc_.th_dp(dp, node) - prof_.r(dp, ts);
          if (drain > kRateTol && level / drain <= dt_min) {
            tl_[node](dp, ts) = 0.0;
            swept = true;
          }
        }
    }
    return swept;
  }

  bool apply_arrivals(double t) {
    bool any = false;
    const double tol = 1e-12 * std::max(1.0, t);
    while (arr_idx_ < arrivals_.size() && arrivals_[arr_idx_].time <= t + tol) {
      const Arrival& a = arrivals_[arr_idx_++];
      any = true;
      if (static_cast<int>(flows_[a.node].size()) >= fmax_) {
        ++trace_.discarded_per_node[a.node];  // flow limit reached
        continue;
      }
      flows_[a.node].push_back({next_id_++, a.node, a.time, a.size, a.size});
    }
    return any;
  }

  bool apply_finishes(double t) {
    bool any = false;
    for (int node = 0; node < n_; ++node) {
      auto& fl = flows_[node];
      for (std::size_t i = 0; i < fl.size();) {
        if (!fl[i].pinned() && fl[i].remaining <= kFlowSnap) {
          trace_.completed.push_back({fl[i].id, node, fl[i].arrival, fl[i].size, t});
          fl.erase(fl.begin() + static_cast<std::ptrdiff_t>(i));
          any = true;
        } else {
          ++i;
        }
      }
    }
    return any;
  }

  void recompute(EventKind kind) {
    std::vector<int> f(n_);
    for (int node = 0; node < n_; ++node) f[node] = static_cast<int>(flows_[node].size());
    const BoundsMatrix b = bounds(prof_, tl_, f);
    alloc_ = allocate(b, f, c_);

    for (double v : alloc_.th)
      if (!std::isfinite(v)) throw std::runtime_error("fluid: non-finite allocation");

    // an empty bucket must never be asked to drain faster than it refills
    for (int node = 0; node < n_; ++node)
      for (int dp = 0; dp < prof_.n_dp(); ++dp)
        for (int ts = 0; ts < prof_.n_ts(); ++ts)
          if (tl_[node](dp, ts) <= 0 &&
              alloc_.th_dp(dp, node) > prof_.r(dp, ts) + 1e-9) {
            std::ostringstream os;
            os << "fluid: allocation overdraws empty bucket (node " << node + 1 << ", dp "
               << dp + 1 << ", ts " << ts + 1 << ")";
            throw std::runtime_error(os.str());
          }

    if (b.any_active()) {
      const double err = std::abs(alloc_.total() - c_);
      trace_.max_conservation_error = std::max(trace_.max_conservation_error, err);
      if (expect_work_conserving_ && err > 1e-6)
        throw std::runtime_error("fluid: work conservation violated by " + fmt_num(err));
    }

    trace_.records.push_back({t_, kind, alloc_.dp_c, alloc_.th, alloc_.th_dp, f});
  }

  ProfileConfig prof_;
  double c_;
  int n_;
  int fmax_;
  bool expect_work_conserving_ = false;

  double t_ = 0.0;
  bool started_ = false;
  std::vector<Mat> tl_;
  std::vector<std::vector<FlowRecord>> flows_;
  std::vector<Arrival> arrivals_;
  std::size_t arr_idx_ = 0;
  std::int64_t next_id_ = 1;
  AllocationResult alloc_;
  SimTrace trace_;
};

// Scripted single run: explicit initial token levels, permanently active
// (pinned) flows, and a fixed arrival list.
struct Scenario {
  ProfileConfig profile;
  double capacity = 0.0;
  int nodes = 0;
  int f_max = 20;
  double horizon = 0.0;
  // node, dp, ts are 0-based here; scenario files use 1-based labels
  std::vector<std::tuple<int, int, int, double>> token_overrides;
  std::vector<std::pair<int, int>> pinned;
  std::vector<Arrival> arrivals;
};

inline SimTrace run_scenario(const Scenario& s) {
  FluidEngine eng(s.profile, s.capacity, s.nodes, s.f_max);
  for (const auto& [node, dp, ts, level] : s.token_overrides)
    eng.set_token_level(node, dp, ts, level);
  for (const auto& [node, count] : s.pinned) eng.add_pinned_flows(node, count);
  eng.set_arrivals(s.arrivals);
  eng.run_until(s.horizon);
  return eng.take_trace();
}

// Scenario JSON; the profile is either inline or a path relative to base_dir.
inline Scenario scenario_from_json(const nlohmann::json& j, const std::string& base_dir = ".") {
  Scenario s;
  const auto& jp = j.at("profile");
  if (jp.is_string()) {
    std::string path = jp.get<std::string>();
    if (!path.empty() && path[0] != '/') path = base_dir + "/" + path;
    s.profile = profile_from_json(load_json_file(path));
  } else {
    s.profile = profile_from_json(jp);
  }
  s.capacity = j.at("capacity_gbps").get<double>();
  s.nodes = j.at("nodes").get<int>();
  s.f_max = j.value("f_max", 20);
  s.horizon = j.at("horizon_s").get<double>();
  if (j.contains("token_overrides"))
    for (const auto& o : j.at("token_overrides"))
      s.token_overrides.emplace_back(o.at("node").get<int>() - 1, o.at("dp").get<int>() - 1,
                                     o.at("ts").get<int>() - 1,
                                     o.at("level_gbit").get<double>());
  if (j.contains("pinned_flows"))
    for (const auto& o : j.at("pinned_flows"))
      s.pinned.emplace_back(o.at("node").get<int>() - 1, o.at("count").get<int>());
  if (j.contains("arrivals"))
    for (const auto& o : j.at("arrivals"))
      s.arrivals.push_back({o.at("node").get<int>() - 1, o.at("time_s").get<double>(),
                            o.at("size_gbit").get<double>()});
  return s;
}

// Trace CSV: one row per (record, node, dp); dp 0 carries the node total.
// Nodes and dps are 1-based in the file.
inline void write_trace_csv(std::ostream& out, const SimTrace& tr) {
  out << "time_s,event,node,dp,th_gbps,flow_count\n";
  for (const TraceRecord& rec : tr.records)
    for (int node = 0; node < tr.nodes; ++node) {
      out << fmt_num(rec.t) << "," << event_name(rec.kind) << "," << node + 1 << ",0,"
          << fmt_num(rec.th[node]) << "," << rec.flows[node] << "\n";
      for (int dp = 0; dp < rec.th_dp.rows(); ++dp)
        out << fmt_num(rec.t) << "," << event_name(rec.kind) << "," << node + 1 << ","
            << dp + 1 << "," << fmt_num(rec.th_dp(dp, node)) << "," << rec.flows[node]
            << "\n";
    }
}

inline nlohmann::json trace_summary_json(const SimTrace& tr) {
  std::vector<double> volume(tr.nodes, 0.0);
  for (std::size_t i = 0; i < tr.records.size(); ++i) {
    const double hi = i + 1 < tr.records.size() ? tr.records[i + 1].t : tr.horizon;
    const double dt = hi - tr.records[i].t;
    for (int node = 0; node < tr.nodes; ++node)
      volume[node] += tr.records[i].th[node] * dt;
  }
  std::vector<std::int64_t> completed(tr.nodes, 0);
  for (const CompletedFlow& cf : tr.completed) ++completed[cf.node];
  nlohmann::json per_node = nlohmann::json::array();
  for (int node = 0; node < tr.nodes; ++node)
    per_node.push_back({{"node", node + 1},
                        {"volume_gbit", volume[node]},
                        {"completed_flows", completed[node]},
                        {"discarded_flows", tr.discarded_per_node[node]}});
  return nlohmann::json{{"capacity_gbps", tr.capacity},
                        {"nodes", tr.nodes},
                        {"horizon_s", tr.horizon},
                        {"events", tr.records.size()},
                        {"max_conservation_error_gbps", tr.max_conservation_error},
                        {"per_node", per_node}};
}

}  // namespace mtsbwp
