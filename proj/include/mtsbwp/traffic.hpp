#pragma once

// Compound-Poisson traffic: exponential inter-arrival times at a per-node
// rate, file sizes drawn from a small discrete distribution. One master seed
// drives everything; each node derives an independent substream from its
// index, so adding nodes leaves existing streams untouched. Sampling uses
// explicit inversion on mt19937_64 output, which keeps arrival lists
// bit-identical across platforms.

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fluid.hpp"
#include "io_util.hpp"

namespace mtsbwp {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(splitmix64(master) ^ splitmix64(stream + 1));
}

inline double u01(std::mt19937_64& g) { return (g() >> 11) * 0x1.0p-53; }  // [0, 1)

struct SizeProb {
  double size = 0.0;  // Gbit
  double prob = 0.0;
};

struct TrafficSpec {
  double rate = 0.0;  // flow arrivals per second
  std::vector<SizeProb> sizes;
  std::uint64_t seed = 0;

  double mean_size() const {
    double m = 0.0;
    for (const SizeProb& sp : sizes) m += sp.size * sp.prob;
    return m;
  }

  void check() const {
    if (rate < 0) throw std::invalid_argument("traffic: negative arrival rate");
    if (sizes.empty()) throw std::invalid_argument("traffic: empty size distribution");
    double total = 0.0;
    for (const SizeProb& sp : sizes) {
      if (!(sp.size > 0)) throw std::invalid_argument("traffic: file sizes must be positive");
      if (sp.prob < 0) throw std::invalid_argument("traffic: negative probability");
      total += sp.prob;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw std::invalid_argument("traffic: probabilities must sum to 1");
  }
};

// nominal load = mean file size * arrival rate / nominal speed
inline double nominal_load_to_rate(double load, double nominal_speed, double mean_size) {
  if (!(mean_size > 0)) throw std::invalid_argument("traffic: mean size must be positive");
  if (load < 0) throw std::invalid_argument("traffic: negative load");
  return load * nominal_speed / mean_size;
}

struct SetupSpec {
  std::string name;
  int n_low = 0;
  int n_high = 0;
  double low_load = 0.0;
  double system_load = 0.0;
  double capacity = 0.0;
  int nodes = 0;

  double nominal_speed() const { return capacity / nodes; }
};

// The system load is the mean of the per-node nominal loads.
inline double high_load_from_system(const SetupSpec& s) {
  if (s.n_high < 1) throw std::invalid_argument("setup: needs at least one high load node");
  const double high = (s.nodes * s.system_load - s.n_low * s.low_load) / s.n_high;
  if (!(high > 0)) throw std::invalid_argument("setup: high load comes out non-positive");
  return high;
}

inline std::vector<SizeProb> default_size_mix() {
  return {{0.8, 0.5}, {8.0, 0.5}};  // 100 MByte and 1 GByte at 50% each
}

namespace detail {
inline const std::vector<double>& system_load_grid() {
  static const std::vector<double> v{0.6, 0.7, 0.8, 0.9, 0.95, 1.0, 1.1, 1.2, 1.5, 2.0};
  return v;
}
inline const std::vector<double>& low_load_grid() {
  static const std::vector<double> v{0.5, 0.6, 0.7, 0.8, 0.9, 0.95};
  return v;
}
inline bool in_grid(const std::vector<double>& grid, double v) {
  for (double g : grid)
    if (std::abs(g - v) <= 1e-12) return true;
  return false;
}
}  // namespace detail

// Setups A/B sweep the system load with the low load pinned at 0.5; C/D
// sweep the low load with the system load pinned at 1.1. A/C have one low
// load node, B/D have two. Five nodes, 10 Gbps, throughout.
inline SetupSpec make_setup(const std::string& name, double param, double capacity = 10.0,
                            int nodes = 5) {
  SetupSpec s;
  s.name = name;
  s.capacity = capacity;
  s.nodes = nodes;
  if (name == "A" || name == "B") {
    if (!detail::in_grid(detail::system_load_grid(), param))
      throw std::invalid_argument("setup " + name + ": system load " + fmt_num(param) +
                                  " is not in the parameter list");
    s.n_low = name == "A" ? 1 : 2;
    s.low_load = 0.5;
    s.system_load = param;
  } else if (name == "C" || name == "D") {
    if (!detail::in_grid(detail::low_load_grid(), param))
      throw std::invalid_argument("setup " + name + ": low load " + fmt_num(param) +
                                  " is not in the parameter list");
    s.n_low = name == "C" ? 1 : 2;
    s.low_load = param;
    s.system_load = 1.1;
  } else {
    throw std::invalid_argument("unknown setup " + name);
  }
  s.n_high = s.nodes - s.n_low;
  return s;
}

// Per-node traffic specs; low load nodes come first.
inline std::vector<TrafficSpec> build_setup(const SetupSpec& s, std::uint64_t master_seed) {
  const double high = high_load_from_system(s);
  const double s_n = s.nominal_speed();
  std::vector<TrafficSpec> specs(s.nodes);
  for (int node = 0; node < s.nodes; ++node) {
    TrafficSpec& spec = specs[node];
    spec.sizes = default_size_mix();
    const double load = node < s.n_low ? s.low_load : high;
    spec.rate = nominal_load_to_rate(load, s_n, spec.mean_size());
    spec.seed = stream_seed(master_seed, static_cast<std::uint64_t>(node));
  }
  return specs;
}

inline std::vector<Arrival> generate(const TrafficSpec& spec, int node, double horizon) {
  spec.check();
  std::vector<Arrival> out;
  if (spec.rate <= 0 || horizon <= 0) return out;
  std::mt19937_64 g(spec.seed);
  std::vector<double> cum(spec.sizes.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < spec.sizes.size(); ++i) {
    acc += spec.sizes[i].prob;
    cum[i] = acc;
  }
  cum.back() = 1.0;
  double t = 0.0;
  while (true) {
    t += -std::log1p(-u01(g)) / spec.rate;
    if (t > horizon) break;
    const double v = u01(g);
    std::size_t k = 0;
    while (k + 1 < cum.size() && v >= cum[k]) ++k;
    out.push_back({node, t, spec.sizes[k].size});
  }
  return out;
}

inline void write_arrivals_csv(std::ostream& out, const std::vector<Arrival>& arrivals) {
  out << "node,time_s,size_gbit\n";
  for (const Arrival& a : arrivals)
    out << a.node + 1 << "," << fmt_num(a.time) << "," << fmt_num(a.size) << "\n";
}

inline std::vector<Arrival> read_arrivals_csv(std::istream& in) {
  std::vector<Arrival> out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first && line.rfind("node", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    const auto cells = split_csv_line(line);
    if (cells.size() < 3) throw std::runtime_error("arrivals csv: expected 3 columns");
    out.push_back({std::stoi(cells[0]) - 1, std::stod(cells[1]), std::stod(cells[2])});
  }
  return out;
}

}  // namespace mtsbwp
