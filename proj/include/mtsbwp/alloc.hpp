#pragma once

// Instantaneous fluid bandwidth allocation. Token levels bound each node's
// throughput per drop precedence; the congestion DP is the first precedence
// whose cumulative bound mass reaches the capacity; within it the remaining
// capacity is filled progressively, proportional to per-node flow counts.

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "matrix.hpp"
#include "profile.hpp"

namespace mtsbwp {

inline constexpr double kRateTol = 1e-12;    // Gbps equality tolerance
inline constexpr double kTokenSnap = 1e-12;  // Gbit; levels at or below count as empty

struct BoundsMatrix {
  Mat bd;                    // n_dp x nodes [Gbps]
  std::vector<bool> active;  // nodes holding at least one flow

  int nodes() const { return bd.cols(); }
  int n_dp() const { return bd.rows(); }
  bool any_active() const {
    for (bool a : active)
      if (a) return true;
    return false;
  }
};

struct AllocationResult {
  std::vector<double> th;  // per-node throughput [Gbps]
  Mat th_dp;               // n_dp x nodes [Gbps]
  int dp_c = 0;            // congestion DP, 1-based; 0 when nothing is active

  double total() const {
    double s = 0.0;
    for (double v : th) s += v;
    return s;
  }
};

// Per-dp throughput bound: the smallest rate among that dp's empty buckets.
// Zero-size buckets are permanently empty and act as pure rate limiters.
inline BoundsMatrix bounds(const ProfileConfig& p, const std::vector<Mat>& tokens,
                           const std::vector<int>& flows) {
  const int n = static_cast<int>(tokens.size());
  if (static_cast<int>(flows.size()) != n)
    throw std::invalid_argument("bounds: flow counts and token states disagree");
  BoundsMatrix b;
  b.bd = Mat(p.n_dp(), n, 0.0);
  b.active.assign(n, false);
  for (int node = 0; node < n; ++node) {
    const Mat& tl = tokens[node];
    if (tl.rows() != p.n_dp() || tl.cols() != p.n_ts())
      throw std::invalid_argument("bounds: token state shape mismatch");
    b.active[node] = flows[node] > 0;
    for (int dp = 0; dp < p.n_dp(); ++dp) {
      double bound = std::numeric_limits<double>::infinity();
      for (int t = 0; t < p.n_ts(); ++t)
        if (tl(dp, t) <= kTokenSnap) bound = std::min(bound, p.r(dp, t));
      if (!std::isfinite(bound)) {
        std::ostringstream os;
        os << "bounds: no empty bucket at dp " << dp + 1 << ", node " << node + 1
           << "; fluid profiles need BS[dp,1] = 0";
        throw std::invalid_argument(os.str());
      }
      b.bd(dp, node) = bound;
    }
  }
  return b;
}

// Smallest dp whose cumulative bound mass over active nodes reaches the
// capacity. Falls back to the last dp when even the full mass stays below
// capacity (non-work-conserving profile); allocation then tops out at the
// cap sum.
inline int congestion_dp(const BoundsMatrix& b, double capacity) {
  if (!b.any_active()) throw std::invalid_argument("congestion_dp: no active node");
  double cum = 0.0;
  for (int dp = 0; dp < b.n_dp(); ++dp) {
    for (int node = 0; node < b.nodes(); ++node)
      if (b.active[node]) cum += b.bd(dp, node);
    if (cum >= capacity - 1e-9 * std::max(1.0, capacity)) return dp + 1;
  }
  return b.n_dp();
}

// Greedy per-dp split of a node throughput: precedences below the congestion
// DP are served in full, the congestion DP takes the rest, everything above
// is discarded.
inline Mat split_per_dp(const std::vector<double>& th, const BoundsMatrix& b, int dp_c) {
  Mat out(b.n_dp(), b.nodes(), 0.0);
  for (int node = 0; node < b.nodes(); ++node) {
    if (!b.active[node]) continue;
    double rest = th[node];
    for (int dp = 0; dp < dp_c && dp < b.n_dp(); ++dp) {
      const double take = std::min(b.bd(dp, node), rest);
      out(dp, node) = take;
      rest -= take;
    }
    if (rest > 1e-6)
      throw std::logic_error("split_per_dp: throughput exceeds the cumulative bound");
  }
  return out;
}

// Progressive filling: start every active node at its guaranteed mass (all
// precedences below dp_c), then repeatedly raise the nodes with the smallest
// th/f ratio together until capacity or their caps stop them.
inline AllocationResult allocate(const BoundsMatrix& b, const std::vector<int>& flows,
                                 double capacity) {
  const int n = b.nodes();
  AllocationResult res;
  res.th.assign(n, 0.0);
  res.th_dp = Mat(b.n_dp(), n, 0.0);
  if (!b.any_active()) return res;

  const int dp_c = congestion_dp(b, capacity);
  res.dp_c = dp_c;

  std::vector<double> cap(n, 0.0);
  std::vector<bool> eligible(n, false);
  double total = 0.0;
  for (int node = 0; node < n; ++node) {
    if (!b.active[node]) continue;
    double floor = 0.0;
    for (int dp = 0; dp + 1 < dp_c; ++dp) floor += b.bd(dp, node);
    cap[node] = floor + b.bd(dp_c - 1, node);
    res.th[node] = floor;
    total += floor;
    eligible[node] = true;
  }

  const double cap_tol = 1e-12 * std::max(1.0, capacity);
  const int max_iters = 2 * n + 2;
  int iters = 0;
  while (total < capacity - cap_tol) {
    if (++iters > max_iters)
      throw std::logic_error("allocate: progressive filling failed to terminate");

    // 1. saturated nodes leave the race
    bool any_eligible = false;
    for (int node = 0; node < n; ++node) {
      if (eligible[node] && res.th[node] >= cap[node] - kRateTol) eligible[node] = false;
      any_eligible = any_eligible || eligible[node];
    }
    if (!any_eligible) break;  // all capped below capacity

    // 2. mark the minimal-ratio nodes, note the next ratio level
    double rmin = std::numeric_limits<double>::infinity();
    for (int node = 0; node < n; ++node)
      if (eligible[node]) rmin = std::min(rmin, res.th[node] / flows[node]);
    double rsecond = std::numeric_limits<double>::infinity();
    double marked_flows = 0.0;
    for (int node = 0; node < n; ++node) {
      if (!eligible[node]) continue;
      const double ratio = res.th[node] / flows[node];
      if (ratio <= rmin + kRateTol)
        marked_flows += flows[node];
      else
        rsecond = std::min(rsecond, ratio);
    }

    // 3. largest common raise the caps, the next ratio level and the
    //    capacity all allow
    double delta = (capacity - total) / marked_flows;
    if (std::isfinite(rsecond)) delta = std::min(delta, rsecond - rmin);
    for (int node = 0; node < n; ++node) {
      if (!eligible[node]) continue;
      if (res.th[node] / flows[node] <= rmin + kRateTol)
        delta = std::min(delta, (cap[node] - res.th[node]) / flows[node]);
    }
    if (delta <= 0) continue;  // a capped node gets removed next pass
    for (int node = 0; node < n; ++node) {
      if (!eligible[node]) continue;
      if (res.th[node] / flows[node] <= rmin + kRateTol) {
        res.th[node] += flows[node] * delta;
        total += flows[node] * delta;
      }
    }
  }

  res.th_dp = split_per_dp(res.th, b, dp_c);
  return res;
}

}  // namespace mtsbwp
