#pragma once

// Summary statistics over simulation traces: node bandwidth during active
// periods (time weighted) and per-flow bandwidth by size class (one sample
// per completed flow). A band is the weighted mean plus worst-10% / best-10%
// markers, either as weighted percentiles (default) or as the means of the
// outer deciles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "fluid.hpp"

namespace mtsbwp {

enum class BandMode { percentile, decile_mean };

struct StatBand {
  double mean = 0.0;
  double worst = 0.0;  // 10% mark
  double best = 0.0;   // 90% mark
  std::int64_t samples = 0;
  double weight = 0.0;
};

struct WeightedSample {
  double value = 0.0;
  double weight = 0.0;
};

namespace detail {

// Lower weighted quantile: smallest value whose cumulative weight reaches
// q * total. xs must be sorted by value.
inline double weighted_quantile(const std::vector<WeightedSample>& xs, double q, double total) {
  const double target = q * total;
  double cum = 0.0;
  for (const WeightedSample& x : xs) {
    cum += x.weight;
    if (cum >= target - 1e-12 * total) return x.value;
  }
  return xs.back().value;
}

// Weighted mean of the lowest (from_low) or highest `mass` fraction,
// splitting the straddling sample.
inline double decile_mean(const std::vector<WeightedSample>& xs, double mass, double total,
                          bool from_low) {
  double want = mass * total;
  double acc = 0.0, wacc = 0.0;
  if (from_low) {
    for (const WeightedSample& x : xs) {
      const double take = std::min(x.weight, want - wacc);
      acc += x.value * take;
      wacc += take;
      if (wacc >= want) break;
    }
  } else {
    for (auto it = xs.rbegin(); it != xs.rend(); ++it) {
      const double take = std::min(it->weight, want - wacc);
      acc += it->value * take;
      wacc += take;
      if (wacc >= want) break;
    }
  }
  return wacc > 0 ? acc / wacc : xs.front().value;
}

}  // namespace detail

inline std::optional<StatBand> weighted_band(std::vector<WeightedSample> xs,
                                             BandMode mode = BandMode::percentile) {
  double total = 0.0;
  for (const WeightedSample& x : xs) {
    if (x.weight < 0) throw std::invalid_argument("weighted_band: negative weight");
    total += x.weight;
  }
  if (!(total > 0)) return std::nullopt;
  std::sort(xs.begin(), xs.end(),
            [](const WeightedSample& a, const WeightedSample& b) { return a.value < b.value; });
  StatBand band;
  band.weight = total;
  band.samples = static_cast<std::int64_t>(xs.size());
  for (const WeightedSample& x : xs) band.mean += x.value * x.weight;
  band.mean /= total;
  if (mode == BandMode::percentile) {
    band.worst = detail::weighted_quantile(xs, 0.10, total);
    band.best = detail::weighted_quantile(xs, 0.90, total);
  } else {
    band.worst = detail::decile_mean(xs, 0.10, total, true);
    band.best = detail::decile_mean(xs, 0.10, total, false);
  }
  return band;
}

// One sample per trace interval and node in `nodes` with at least one flow,
// weighted by interval length, clipped to (warmup, horizon].
inline std::vector<WeightedSample> node_bandwidth_samples(const SimTrace& tr,
                                                          const std::vector<int>& nodes,
                                                          double warmup) {
  std::vector<WeightedSample> xs;
  for (std::size_t i = 0; i < tr.records.size(); ++i) {
    const TraceRecord& rec = tr.records[i];
    const double hi = std::min(i + 1 < tr.records.size() ? tr.records[i + 1].t : tr.horizon,
                               tr.horizon);
    const double lo = std::max(rec.t, warmup);
    if (hi <= lo) continue;
    for (int node : nodes)
      if (rec.flows[node] > 0) xs.push_back({rec.th[node], hi - lo});
  }
  return xs;
}

// One sample per completed flow of the given size class at the given nodes;
// flows still in flight at the horizon never complete, so they are excluded
// by construction.
inline std::vector<WeightedSample> flow_bandwidth_samples(const SimTrace& tr, double size_class,
                                                          const std::vector<int>& nodes,
                                                          double warmup) {
  std::vector<WeightedSample> xs;
  for (const CompletedFlow& cf : tr.completed) {
    if (cf.arrival < warmup || cf.finish > tr.horizon) continue;
    if (std::abs(cf.size - size_class) > 1e-9 * std::max(1.0, size_class)) continue;
    bool in_group = false;
    for (int node : nodes) in_group = in_group || node == cf.node;
    if (!in_group) continue;
    if (!(cf.finish > cf.arrival)) continue;
    xs.push_back({cf.size / (cf.finish - cf.arrival), 1.0});
  }
  return xs;
}

inline std::optional<StatBand> node_bandwidth(const SimTrace& tr, const std::vector<int>& nodes,
                                              double warmup,
                                              BandMode mode = BandMode::percentile) {
  return weighted_band(node_bandwidth_samples(tr, nodes, warmup), mode);
}

inline std::optional<StatBand> flow_bandwidth(const SimTrace& tr, double size_class,
                                              const std::vector<int>& nodes, double warmup,
                                              BandMode mode = BandMode::percentile) {
  return weighted_band(flow_bandwidth_samples(tr, size_class, nodes, warmup), mode);
}

}  // namespace mtsbwp
