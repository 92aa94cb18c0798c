#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "mtsbwp/fluid.hpp"
#include "mtsbwp/profile.hpp"
#include "oracles.hpp"

using namespace mtsbwp;
using Catch::Approx;

namespace {

ProfileConfig example_profile() {
  Requirements req;
  req.capacity = 10.0;
  req.nodes = 5;
  req.guaranteed = {2.0, 2.0, 2.0, 0.75};
  req.download = {6.0, 4.0, 3.0};
  req.file_sizes = {0.8, 8.0, 90.0};
  return dimension_profile(req);
}

// nodes 2..5 pinned into bad history with 20 permanent flows each; node 1
// starts one 90 Gbit flow at t = 0
Scenario fig3_scenario(double horizon = 40.0) {
  Scenario s;
  s.profile = example_profile();
  s.capacity = 10.0;
  s.nodes = 5;
  s.f_max = 20;
  s.horizon = horizon;
  for (int node = 1; node < 5; ++node)
    for (int dp = 0; dp < 3; ++dp) s.token_overrides.emplace_back(node, dp, 3, 0.0);
  for (int node = 1; node < 5; ++node) s.pinned.emplace_back(node, 20);
  s.arrivals.push_back({0, 0.0, 90.0});
  return s;
}

// piecewise-constant integral of th[n]/f[n] over [t0, t1]
double integrate_flow_share(const SimTrace& tr, int node, double t0, double t1) {
  double acc = 0.0;
  for (std::size_t i = 0; i < tr.records.size(); ++i) {
    const double lo = std::max(tr.records[i].t, t0);
    const double hi =
        std::min(i + 1 < tr.records.size() ? tr.records[i + 1].t : tr.horizon, t1);
    if (hi <= lo || tr.records[i].flows[node] == 0) continue;
    acc += tr.records[i].th[node] / tr.records[i].flows[node] * (hi - lo);
  }
  return acc;
}

}  // namespace

TEST_CASE("large flow against bad-history competition", "[fluid]") {
  const SimTrace tr = run_scenario(fig3_scenario());
  REQUIRE(tr.records.size() >= 4);

  // phase a: full burst speed while the short-timescale buckets last
  const TraceRecord& start = tr.records[0];
  REQUIRE(start.t == 0.0);
  REQUIRE(start.dp_c == 2);
  REQUIRE(start.th[0] == Approx(6.0).margin(1e-6));
  for (int n = 1; n < 5; ++n) REQUIRE(start.th[n] == Approx(1.0).margin(1e-6));

  // phase b: the dp-2 short bucket empties at exactly ts2 and the rate
  // steps down to the maintainable download speed
  const TraceRecord& b = tr.records[1];
  REQUIRE(b.kind == EventKind::bucket_empty);
  REQUIRE(b.t == Approx(0.8 / 6.0).margin(1e-9));
  REQUIRE(b.dp_c == 3);
  REQUIRE(b.th[0] == Approx(4.0).margin(1e-6));

  // the dp-2 mid bucket empties at exactly ts3
  const TraceRecord& c = tr.records[2];
  REQUIRE(c.kind == EventKind::bucket_empty);
  REQUIRE(c.t == Approx(2.0).margin(1e-9));
  REQUIRE(c.th[0] == Approx(3.0).margin(1e-6));

  // node 1 finishes; everything returns to nodes 2..5
  REQUIRE(tr.completed.size() == 1);
  const CompletedFlow& done = tr.completed[0];
  REQUIRE(done.node == 0);
  REQUIRE(done.size == Approx(90.0));
  REQUIRE(done.finish == Approx(2.0 + (90.0 - 8.0 - 0.8 / 3.0) / 3.0).margin(1e-6));
  bool saw_finish = false;
  for (const TraceRecord& rec : tr.records) {
    if (rec.kind != EventKind::finish) continue;
    saw_finish = true;
    REQUIRE(rec.th[0] == 0.0);
    double rest = 0.0;
    for (int n = 1; n < 5; ++n) rest += rec.th[n];
    REQUIRE(rest == Approx(10.0).margin(1e-6));
  }
  REQUIRE(saw_finish);
  REQUIRE(tr.max_conservation_error <= 1e-9);
}

TEST_CASE("served volume matches the flow size", "[fluid]") {
  const SimTrace tr = run_scenario(fig3_scenario());
  const CompletedFlow& done = tr.completed[0];
  const double served = integrate_flow_share(tr, 0, done.arrival, done.finish);
  REQUIRE(served == Approx(done.size).margin(1e-6));
}

TEST_CASE("fresh-node buckets empty exactly at their timescales", "[fluid]") {
  // single node, unlimited demand: dp 1 and dp 2 are served at exactly their
  // own bounds, so their buckets empty at ts2, ts3, ts4 by construction. The
  // dp-3 buckets drain early since dp 3 is the congestion dp and takes
  // whatever the node total leaves over its bound.
  Scenario s;
  s.profile = example_profile();
  s.capacity = 10.0;
  s.nodes = 1;
  s.f_max = 20;
  s.horizon = 35.0;
  s.pinned.emplace_back(0, 1);
  const SimTrace tr = run_scenario(s);

  std::vector<double> bucket_events;
  for (const TraceRecord& rec : tr.records)
    if (rec.kind == EventKind::bucket_empty) bucket_events.push_back(rec.t);
  REQUIRE(bucket_events.size() == 4);
  REQUIRE(bucket_events[0] == Approx(0.8 / 6.0).margin(1e-9));  // (2,2) at ts2
  REQUIRE(bucket_events[1] == Approx(2.0).margin(1e-9));        // (2,3) at ts3
  // (3,3) and (3,4): 18 Gbit drained at 3, then 5, then 6 Gbps
  REQUIRE(bucket_events[2] == Approx(152.0 / 45.0).margin(1e-9));
  REQUIRE(bucket_events[3] == Approx(30.0).margin(1e-9));  // (1,4) and (2,4) at ts4

  for (const TraceRecord& rec : tr.records) REQUIRE(rec.th[0] == Approx(10.0).margin(1e-9));
  const TraceRecord& last = tr.records.back();
  REQUIRE(last.th_dp(0, 0) == Approx(0.75).margin(1e-9));
  REQUIRE(last.th_dp(1, 0) == Approx(0.25).margin(1e-9));
  REQUIRE(last.th_dp(2, 0) == Approx(1.0).margin(1e-9));
  REQUIRE(last.th_dp(3, 0) == Approx(8.0).margin(1e-9));
}

TEST_CASE("next event peeking", "[fluid]") {
  SECTION("single flow finish time") {
    ProfileConfig p = trtcm_profile(4, 0);
    FluidEngine eng(p, 4.0, 1, 20);
    eng.set_arrivals({{0, 0.0, 8.0}});
    eng.run_until(0.0);
    const auto ev = eng.peek_next_event();
    REQUIRE(ev.has_value());
    REQUIRE(ev->first == Approx(2.0).margin(1e-12));
    REQUIRE(ev->second == EventKind::finish);
  }
  SECTION("bucket empty precedes the finish of a long flow") {
    FluidEngine eng(example_profile(), 10.0, 5, 20);
    // same initial state as the fig-3 scenario
    for (int node = 1; node < 5; ++node) {
      for (int dp = 0; dp < 3; ++dp) eng.set_token_level(node, dp, 3, 0.0);
      eng.add_pinned_flows(node, 20);
    }
    eng.set_arrivals({{0, 0.0, 90.0}});
    eng.run_until(0.0);
    const auto ev = eng.peek_next_event();
    REQUIRE(ev.has_value());
    REQUIRE(ev->second == EventKind::bucket_empty);
    REQUIRE(ev->first == Approx(0.8 / 6.0).margin(1e-9));
  }
  SECTION("pending arrival in an empty system") {
    FluidEngine eng(example_profile(), 10.0, 5, 20);
    eng.set_arrivals({{2, 5.0, 1.0}});
    eng.run_until(0.0);
    const auto ev = eng.peek_next_event();
    REQUIRE(ev.has_value());
    REQUIRE(ev->first == 5.0);
    REQUIRE(ev->second == EventKind::arrival);
  }
}

TEST_CASE("idle nodes refill their buckets", "[fluid]") {
  FluidEngine eng(example_profile(), 10.0, 2, 20);
  eng.set_token_level(1, 1, 3, 0.0);  // dp-2 longest bucket drained
  eng.run_until(10.0);
  REQUIRE(eng.token_level(1, 1, 3) == Approx(2.5).margin(1e-9));  // 0.25 Gbps for 10 s
  REQUIRE(eng.token_level(1, 0, 3) == Approx(37.5));              // full stays full
  REQUIRE(eng.trace().records.empty());
}

TEST_CASE("no arrivals leave an empty trace", "[fluid]") {
  FluidEngine eng(example_profile(), 10.0, 5, 20);
  eng.run_until(100.0);
  REQUIRE(eng.trace().records.empty());
  REQUIRE(eng.trace().completed.empty());
}

TEST_CASE("flow limit discards further arrivals", "[fluid]") {
  FluidEngine eng(example_profile(), 10.0, 2, 3);
  eng.add_pinned_flows(0, 3);
  eng.set_arrivals({{0, 1.0, 5.0}, {1, 2.0, 5.0}});
  eng.run_until(10.0);
  REQUIRE(eng.trace().discarded_per_node[0] == 1);
  REQUIRE(eng.trace().discarded_per_node[1] == 0);
}

TEST_CASE("run_until cannot go backwards", "[fluid]") {
  FluidEngine eng(example_profile(), 10.0, 2, 20);
  eng.run_until(5.0);
  REQUIRE_THROWS_AS(eng.run_until(4.0), std::invalid_argument);
}

TEST_CASE("fluid engine rejects nonzero ts-1 buckets", "[fluid]") {
  ProfileConfig p = trtcm_profile(2, 8, 0.5, 0.5);
  REQUIRE_THROWS_AS(FluidEngine(p, 10.0, 5, 20), std::invalid_argument);
}

TEST_CASE("trace is invariant to splitting the run", "[fluid]") {
  std::mt19937_64 g(5);
  auto uni = [&g](double lo, double hi) { return lo + (hi - lo) * ((g() >> 11) * 0x1.0p-53); };
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<Arrival> arrivals;
    for (int i = 0; i < 40; ++i)
      arrivals.push_back({static_cast<int>(g() % 5), uni(0.0, 30.0),
                          g() % 2 ? 0.8 : 8.0});
    FluidEngine full(example_profile(), 10.0, 5, 20);
    full.set_arrivals(arrivals);
    full.run_until(40.0);

    FluidEngine split(example_profile(), 10.0, 5, 20);
    split.set_arrivals(arrivals);
    split.run_until(19.719);
    split.run_until(40.0);

    const SimTrace& a = full.trace();
    const SimTrace& b = split.trace();
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      REQUIRE(a.records[i].t == Approx(b.records[i].t).margin(1e-9));
      REQUIRE(a.records[i].kind == b.records[i].kind);
      for (int n = 0; n < 5; ++n)
        REQUIRE(a.records[i].th[n] == Approx(b.records[i].th[n]).margin(1e-9));
    }
    REQUIRE(a.completed.size() == b.completed.size());
  }
}

TEST_CASE("trTCM fluid run matches the direct CIR/EIR allocation", "[fluid]") {
  std::mt19937_64 g(77);
  auto uni = [&g](double lo, double hi) { return lo + (hi - lo) * ((g() >> 11) * 0x1.0p-53); };
  const ProfileConfig p = trtcm_profile(2, 8);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<Arrival> arrivals;
    for (int i = 0; i < 60; ++i)
      arrivals.push_back({static_cast<int>(g() % 5), uni(0.0, 50.0), g() % 2 ? 0.8 : 8.0});
    FluidEngine eng(p, 10.0, 5, 20);
    eng.set_arrivals(arrivals);
    eng.run_until(60.0);
    for (const TraceRecord& rec : eng.trace().records) {
      const auto want = oracles::trtcm_fluid_oracle(2, 8, 10.0, rec.flows);
      for (int n = 0; n < 5; ++n) REQUIRE(rec.th[n] == Approx(want[n]).margin(1e-9));
    }
  }
}

TEST_CASE("work conservation along random traces", "[fluid]") {
  std::mt19937_64 g(123);
  auto uni = [&g](double lo, double hi) { return lo + (hi - lo) * ((g() >> 11) * 0x1.0p-53); };
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<Arrival> arrivals;
    for (int i = 0; i < 80; ++i)
      arrivals.push_back({static_cast<int>(g() % 5), uni(0.0, 60.0), g() % 2 ? 0.8 : 8.0});
    FluidEngine eng(example_profile(), 10.0, 5, 20);
    eng.set_arrivals(arrivals);
    eng.run_until(80.0);
    REQUIRE(eng.trace().max_conservation_error <= 1e-9);
    std::int64_t discarded = 0;
    for (auto d : eng.trace().discarded_per_node) discarded += d;
    REQUIRE(static_cast<std::int64_t>(eng.trace().completed.size()) + discarded == 80);
  }
}

TEST_CASE("scenario json round trip drives the engine", "[fluid]") {
  const ProfileConfig p = example_profile();
  nlohmann::json j{
      {"profile", profile_to_json(p)},
      {"capacity_gbps", 10.0},
      {"nodes", 5},
      {"f_max", 20},
      {"horizon_s", 40.0},
      {"pinned_flows", nlohmann::json::array()},
      {"token_overrides", nlohmann::json::array()},
      {"arrivals", {{{"node", 1}, {"time_s", 0.0}, {"size_gbit", 90.0}}}},
  };
  for (int node = 2; node <= 5; ++node) {
    j["pinned_flows"].push_back({{"node", node}, {"count", 20}});
    for (int dp = 1; dp <= 3; ++dp)
      j["token_overrides"].push_back(
          {{"node", node}, {"dp", dp}, {"ts", 4}, {"level_gbit", 0.0}});
  }
  const Scenario sc = scenario_from_json(j);
  const SimTrace tr = run_scenario(sc);
  REQUIRE(tr.records[0].th[0] == Approx(6.0).margin(1e-6));
  std::ostringstream csv;
  write_trace_csv(csv, tr);
  REQUIRE(csv.str().rfind("time_s,event,node,dp,th_gbps,flow_count\n", 0) == 0);
  const auto summary = trace_summary_json(tr);
  REQUIRE(summary.at("per_node")[0].at("completed_flows").get<int>() == 1);
}
