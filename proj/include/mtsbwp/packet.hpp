#pragma once

// Packet-level MTS-BWP marker and a FIFO buffer with drop-largest-DP-from-head
// AQM. Trace driven and independent of the fluid model: buckets refill
// continuously, marking decisions happen at packet arrival instants.

#include <algorithm>
#include <deque>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "io_util.hpp"
#include "matrix.hpp"
#include "profile.hpp"

namespace mtsbwp {

inline constexpr int kRed = 0;  // no drop precedence had enough tokens

struct Packet {
  double arrival = 0.0;       // s
  long long size_bytes = 0;   // > 0
  int dp = 0;                 // 1..n_dp once marked, kRed when out of profile
};

inline double bytes_to_gbit(long long bytes) { return bytes * 8e-9; }

// Token levels per (dp, ts) bucket, refilled continuously at the profile
// rates and capped at the bucket sizes. Starts full.
class MarkerState {
 public:
  explicit MarkerState(ProfileConfig profile)
      : prof_(std::move(profile)), tl_(prof_.bs), last_(0.0) {
    if (prof_.r.rows() != prof_.bs.rows() || prof_.r.cols() != prof_.bs.cols())
      throw std::invalid_argument("marker: rate/bucket shape mismatch");
  }

  const ProfileConfig& profile() const { return prof_; }
  double last_update() const { return last_; }
  double token_level(int dp, int ts) const { return tl_(dp, ts); }
  void set_token_level(int dp, int ts, double gbit) {
    if (dp < 0 || dp >= tl_.rows() || ts < 0 || ts >= tl_.cols())
      throw std::invalid_argument("marker: bucket index out of range");
    tl_(dp, ts) = std::clamp(gbit, 0.0, prof_.bs(dp, ts));
  }

  void refill(double now) {
    if (now < last_) throw std::invalid_argument("marker: time went backwards");
    const double dt = now - last_;
    if (dt > 0)
      for (int dp = 0; dp < tl_.rows(); ++dp)
        for (int t = 0; t < tl_.cols(); ++t)
          tl_(dp, t) = std::min(prof_.bs(dp, t), tl_(dp, t) + prof_.r(dp, t) * dt);
    last_ = now;
  }

  // Smallest dp whose buckets all hold the packet, decrementing every bucket
  // of that dp; kRed leaves the state untouched.
  int mark(long long size_bytes, double now) {
    if (size_bytes <= 0) throw std::invalid_argument("marker: packet size must be positive");
    refill(now);
    const double need = bytes_to_gbit(size_bytes);
    for (int dp = 0; dp < tl_.rows(); ++dp) {
      bool fits = true;
      for (int t = 0; t < tl_.cols() && fits; ++t) fits = tl_(dp, t) >= need;
      if (fits) {
        for (int t = 0; t < tl_.cols(); ++t) tl_(dp, t) -= need;
        return dp + 1;
      }
    }
    return kRed;
  }

 private:
  ProfileConfig prof_;
  Mat tl_;       // Gbit
  double last_;  // s
};

// FIFO buffer in bytes. When full, the head-most packet of the largest DP
// present gets dropped; an arrival that itself carries the largest DP is
// dropped before any buffered packet.
class DpFifo {
 public:
  explicit DpFifo(long long capacity_bytes) : capacity_(capacity_bytes) {
    if (capacity_bytes <= 0) throw std::invalid_argument("fifo: capacity must be positive");
  }

  long long capacity() const { return capacity_; }
  long long occupancy() const { return occupancy_; }
  std::size_t size() const { return q_.size(); }
  bool empty() const { return q_.empty(); }

  // Returns the packets dropped to make room (possibly the arrival itself).
  std::vector<Packet> enqueue(const Packet& p) {
    if (p.dp == kRed) throw std::invalid_argument("fifo: red packets are dropped upstream");
    if (p.size_bytes <= 0) throw std::invalid_argument("fifo: packet size must be positive");
    std::vector<Packet> dropped;
    if (p.size_bytes > capacity_) {
      dropped.push_back(p);
      return dropped;
    }
    while (occupancy_ + p.size_bytes > capacity_) {
      int max_dp = p.dp;
      for (const Packet& b : q_) max_dp = std::max(max_dp, b.dp);
      if (p.dp >= max_dp) {  // arrival ties or exceeds: drop the arrival
        dropped.push_back(p);
        return dropped;
      }
      for (auto it = q_.begin(); it != q_.end(); ++it)
        if (it->dp == max_dp) {
          dropped.push_back(*it);
          occupancy_ -= it->size_bytes;
          q_.erase(it);
          break;
        }
    }
    q_.push_back(p);
    occupancy_ += p.size_bytes;
    return dropped;
  }

  std::optional<Packet> dequeue() {
    if (q_.empty()) return std::nullopt;
    Packet p = q_.front();
    q_.pop_front();
    occupancy_ -= p.size_bytes;
    return p;
  }

  const std::deque<Packet>& contents() const { return q_; }

 private:
  long long capacity_;
  long long occupancy_ = 0;
  std::deque<Packet> q_;
};

// CSV: arrival_time_s,size_bytes[,dp]; dp 0 means red / unmarked.
inline std::vector<Packet> read_packet_csv(std::istream& in) {
  std::vector<Packet> out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first && line.rfind("arrival_time_s", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    const auto cells = split_csv_line(line);
    if (cells.size() < 2) throw std::runtime_error("packet csv: expected at least 2 columns");
    Packet p;
    p.arrival = std::stod(cells[0]);
    p.size_bytes = std::stoll(cells[1]);
    p.dp = cells.size() > 2 && !cells[2].empty() ? std::stoi(cells[2]) : 0;
    out.push_back(p);
  }
  return out;
}

inline void write_packet_csv(std::ostream& out, const std::vector<Packet>& pkts) {
  out << "arrival_time_s,size_bytes,dp\n";
  for (const Packet& p : pkts)
    out << fmt_num(p.arrival) << "," << p.size_bytes << "," << p.dp << "\n";
}

}  // namespace mtsbwp
