#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "mtsbwp/packet.hpp"
#include "mtsbwp/profile.hpp"

using namespace mtsbwp;
using Catch::Approx;

namespace {

ProfileConfig example_packet_profile() {
  Requirements req;
  req.capacity = 10.0;
  req.nodes = 5;
  req.guaranteed = {2.0, 2.0, 2.0, 0.75};
  req.download = {6.0, 4.0, 3.0};
  req.file_sizes = {0.8, 8.0, 90.0};
  ProfileConfig p = dimension_profile(req);
  p.bs = packet_bucket_sizes(p.bs, p.r, 1500, 0.01);
  return p;
}

Packet make_packet(double t, long long bytes, int dp = 0) { return {t, bytes, dp}; }

}  // namespace

TEST_CASE("token refill", "[packet]") {
  ProfileConfig p = trtcm_profile(2, 8, 1.0, 1.0);
  MarkerState m(p);

  SECTION("no time, no change") {
    m.set_token_level(0, 0, 0.5);
    m.refill(0.0);
    REQUIRE(m.token_level(0, 0) == 0.5);
  }
  SECTION("refill caps at the bucket size") {
    m.set_token_level(0, 0, 0.0);
    m.refill(1.0);  // 2 Gbps for 1 s into a 1 Gbit bucket
    REQUIRE(m.token_level(0, 0) == 1.0);
  }
  SECTION("linear refill below the cap") {
    m.set_token_level(0, 0, 0.5);
    m.refill(0.1);
    REQUIRE(m.token_level(0, 0) == Approx(0.7).margin(1e-12));
  }
  SECTION("time regression throws") {
    m.refill(1.0);
    REQUIRE_THROWS_AS(m.refill(0.5), std::invalid_argument);
  }
}

TEST_CASE("marking picks the smallest feasible dp", "[packet]") {
  SECTION("a full CIR bucket marks green and pays for it") {
    MarkerState m(trtcm_profile(2, 8, 1.0, 1.0));
    REQUIRE(m.mark(1000, 0.0) == 1);
    REQUIRE(m.token_level(0, 0) == Approx(1.0 - 8e-6).margin(1e-15));
    REQUIRE(m.token_level(1, 0) == 1.0);  // EIR bucket untouched
  }
  SECTION("no tokens anywhere means red and no change") {
    MarkerState m(trtcm_profile(2, 8, 1.0, 1.0));
    m.set_token_level(0, 0, 0.0);
    m.set_token_level(1, 0, 0.0);
    REQUIRE(m.mark(1000, 0.0) == kRed);
    REQUIRE(m.token_level(0, 0) == 0.0);
    REQUIRE(m.token_level(1, 0) == 0.0);
  }
  SECTION("an empty dp-1 bucket pushes the packet to dp 2") {
    MarkerState m(example_packet_profile());
    m.set_token_level(0, 3, 0.0);  // dp 1, longest timescale
    REQUIRE(m.mark(1000, 0.0) == 2);
  }
}

TEST_CASE("marking conformance over random streams", "[packet]") {
  const ProfileConfig p = example_packet_profile();
  std::mt19937_64 g(2024);
  auto uni = [&g](double lo, double hi) { return lo + (hi - lo) * ((g() >> 11) * 0x1.0p-53); };

  for (int stream = 0; stream < 3; ++stream) {
    MarkerState m(p);
    struct Marked {
      double t;
      double gbit;
      int dp;
    };
    std::vector<Marked> marked;
    double t = 0.0;
    double min_level = 1e300;
    for (int i = 0; i < 2000; ++i) {
      t += uni(0.0, 2e-3);
      const long long bytes = 200 + static_cast<long long>(g() % 1301);
      const int dp = m.mark(bytes, t);
      if (dp != kRed) marked.push_back({t, bytes_to_gbit(bytes), dp});
      for (int d = 0; d < p.n_dp(); ++d)
        for (int ts = 0; ts < p.n_ts(); ++ts) min_level = std::min(min_level, m.token_level(d, ts));
    }
    REQUIRE(min_level >= -1e-12);  // marking never overdraws a bucket
    REQUIRE(marked.size() > 100);

    // over any window, the volume marked dp stays below rate * window +
    // bucket size; the worst window ends at a marking instant and starts
    // just before another, so a running minimum covers all of them
    for (int dp = 1; dp <= p.n_dp(); ++dp) {
      std::vector<double> times{0.0}, cum{0.0};
      for (const Marked& mk : marked)
        if (mk.dp == dp) {
          times.push_back(mk.t);
          cum.push_back(cum.back() + mk.gbit);
        }
      for (int ts = 0; ts < p.n_ts(); ++ts) {
        const double rate = p.r(dp - 1, ts);
        double worst = -1e300;
        double run_min = 1e300;
        for (std::size_t j = 0; j < times.size(); ++j) {
          if (j > 0) worst = std::max(worst, cum[j] - rate * times[j] - run_min);
          run_min = std::min(run_min, cum[j] - rate * times[j]);
        }
        CAPTURE(stream, dp, ts);
        REQUIRE(worst <= p.bs(dp - 1, ts) + 1e-9);
      }
    }
  }
}

TEST_CASE("fifo drops the head-most packet of the largest dp", "[packet]") {
  DpFifo q(4000);
  REQUIRE(q.enqueue(make_packet(0.0, 1000, 1)).empty());
  REQUIRE(q.enqueue(make_packet(0.1, 1000, 3)).empty());
  REQUIRE(q.enqueue(make_packet(0.2, 1000, 2)).empty());
  REQUIRE(q.enqueue(make_packet(0.3, 1000, 3)).empty());
  // buffer [1,3,2,3] is full; a dp-2 arrival displaces the first dp-3 packet
  const auto dropped = q.enqueue(make_packet(0.4, 1000, 2));
  REQUIRE(dropped.size() == 1);
  REQUIRE(dropped[0].dp == 3);
  REQUIRE(dropped[0].arrival == 0.1);
  std::vector<int> order;
  while (auto pkt = q.dequeue()) order.push_back(pkt->dp);
  REQUIRE(order == std::vector<int>{1, 2, 3, 2});
}

TEST_CASE("fifo edge cases", "[packet]") {
  SECTION("empty buffer accepts and round-trips") {
    DpFifo q(10000);
    const Packet p = make_packet(1.0, 900, 2);
    REQUIRE(q.enqueue(p).empty());
    const auto out = q.dequeue();
    REQUIRE(out.has_value());
    REQUIRE(out->arrival == 1.0);
    REQUIRE_FALSE(q.dequeue().has_value());
  }
  SECTION("arrival holding the largest dp is dropped itself") {
    DpFifo q(3000);
    for (int i = 0; i < 3; ++i) REQUIRE(q.enqueue(make_packet(i, 1000, 1)).empty());
    const auto dropped = q.enqueue(make_packet(3.0, 1000, 4));
    REQUIRE(dropped.size() == 1);
    REQUIRE(dropped[0].dp == 4);
    REQUIRE(q.size() == 3);
  }
  SECTION("tie goes against the arrival") {
    DpFifo q(2000);
    REQUIRE(q.enqueue(make_packet(0.0, 1000, 2)).empty());
    REQUIRE(q.enqueue(make_packet(0.1, 1000, 2)).empty());
    const auto dropped = q.enqueue(make_packet(0.2, 1000, 2));
    REQUIRE(dropped.size() == 1);
    REQUIRE(dropped[0].arrival == 0.2);
  }
  SECTION("oversize packet is dropped immediately") {
    DpFifo q(1000);
    const auto dropped = q.enqueue(make_packet(0.0, 1500, 1));
    REQUIRE(dropped.size() == 1);
    REQUIRE(q.empty());
  }
  SECTION("red packets are rejected") {
    DpFifo q(1000);
    REQUIRE_THROWS_AS(q.enqueue(make_packet(0.0, 100, kRed)), std::invalid_argument);
  }
}

TEST_CASE("fifo aqm properties over random streams", "[packet]") {
  std::mt19937_64 g(555);
  for (int rep = 0; rep < 20; ++rep) {
    DpFifo q(8000);
    long long id = 0;
    bool drops_ok = true, occupancy_ok = true, fifo_ok = true;
    int drop_count = 0;
    for (int step = 0; step < 400; ++step) {
      if (g() % 3 == 0) {
        (void)q.dequeue();
        continue;
      }
      Packet p;
      p.arrival = static_cast<double>(id++);
      p.size_bytes = 400 + static_cast<long long>(g() % 1100);
      p.dp = 1 + static_cast<int>(g() % 4);
      int max_present = p.dp;
      for (const Packet& b : q.contents()) max_present = std::max(max_present, b.dp);
      const auto dropped = q.enqueue(p);
      if (!dropped.empty()) {
        // drops happen in order of the then-largest dp: the sequence is
        // non-increasing, starts at the pre-enqueue maximum and stays
        // above everything that survived
        drops_ok = drops_ok && dropped.front().dp == max_present;
        for (std::size_t k = 0; k + 1 < dropped.size(); ++k)
          drops_ok = drops_ok && dropped[k].dp >= dropped[k + 1].dp;
        int max_left = 0;
        for (const Packet& b : q.contents()) max_left = std::max(max_left, b.dp);
        drops_ok = drops_ok && dropped.back().dp >= max_left;
        drop_count += static_cast<int>(dropped.size());
      }
      long long sum = 0;
      for (const Packet& b : q.contents()) sum += b.size_bytes;
      occupancy_ok = occupancy_ok && sum == q.occupancy() && q.occupancy() <= q.capacity();
      double prev = -1.0;
      for (const Packet& b : q.contents()) {
        fifo_ok = fifo_ok && b.arrival > prev;
        prev = b.arrival;
      }
    }
    CAPTURE(rep, drop_count);
    REQUIRE(drops_ok);
    REQUIRE(occupancy_ok);
    REQUIRE(fifo_ok);
    REQUIRE(drop_count > 0);
  }
}

TEST_CASE("packet csv round trip", "[packet]") {
  std::vector<Packet> pkts{make_packet(0.001, 1500, 1), make_packet(0.002, 64, 0),
                           make_packet(0.5, 900, 3)};
  std::ostringstream out;
  write_packet_csv(out, pkts);
  std::istringstream in(out.str());
  const auto back = read_packet_csv(in);
  REQUIRE(back.size() == pkts.size());
  for (std::size_t i = 0; i < pkts.size(); ++i) {
    REQUIRE(back[i].arrival == pkts[i].arrival);
    REQUIRE(back[i].size_bytes == pkts[i].size_bytes);
    REQUIRE(back[i].dp == pkts[i].dp);
  }
  // headerless two-column traces parse too
  std::istringstream raw("0.25,1000\n0.5,2000\n");
  const auto plain = read_packet_csv(raw);
  REQUIRE(plain.size() == 2);
  REQUIRE(plain[1].size_bytes == 2000);
  REQUIRE(plain[1].dp == 0);
}
