#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "scalota/simnet.hpp"

using namespace scalota::simnet;

namespace {

constexpr uint64_t kHundredMb = 100ull << 20;

struct Msg {
  int tag = 0;
};

}  // namespace

TEST(Simulator, EmptyWorldEndsAtZero) {
  Simulator sim;
  auto r = sim.run();
  EXPECT_EQ(r.clock, 0);
  EXPECT_FALSE(r.timed_out);
}

TEST(Simulator, SingleTimer) {
  Simulator sim;
  bool fired = false;
  sim.schedule_at(5, [&] { fired = true; });
  auto r = sim.run();
  EXPECT_TRUE(fired);
  EXPECT_EQ(r.clock, 5);
}

TEST(Simulator, CancelledTimerNeverFires) {
  Simulator sim;
  bool fired = false;
  auto id = sim.schedule_at(5, [&] { fired = true; });
  sim.cancel(id);
  EXPECT_EQ(sim.run().clock, 0);
  EXPECT_FALSE(fired);
}

TEST(Simulator, HorizonWithLiveTimersIsTimeout) {
  Simulator sim;
  sim.schedule_at(100, [] {});
  auto r = sim.run(50);
  EXPECT_TRUE(r.timed_out);
  EXPECT_EQ(r.clock, 50);
}

TEST(Simulator, SameTimeEventsRunInSchedulingOrder) {
  Simulator sim;
  std::vector<int> order;
  for (int i = 0; i < 5; ++i) sim.schedule_at(1, [&order, i] { order.push_back(i); });
  sim.run();
  EXPECT_EQ(order, (std::vector<int>{0, 1, 2, 3, 4}));
}

TEST(Network, SoleFlowTransferTime) {
  Simulator sim;
  Network<Msg> net(sim);
  auto cell = net.add_link("cell", cellular_profile());
  auto wire = net.add_link("wire", station_wire_profile());
  std::map<int, SimTime> arrivals;
  net.set_receiver([&](const auto& env) { arrivals[env.payload.tag] = sim.now(); });
  net.send("a", "b", cell, kHundredMb, "image", Msg{1});
  net.send("a", "b", wire, kHundredMb, "image", Msg{2});
  sim.run();
  // 100 MiB * 8 / 5 Mbps = 167.772 s, plus 30 ms latency
  EXPECT_NEAR(arrivals[1], kHundredMb * 8.0 / 5e6 * 1000 + 30, 1e-6);
  EXPECT_NEAR(arrivals[1] / 1000, 167.80, 0.01);
  EXPECT_NEAR(arrivals[2] / 1000, 8.39, 0.01);
}

TEST(Network, ZeroByteMessageCostsLatencyOnly) {
  Simulator sim;
  Network<Msg> net(sim);
  auto cell = net.add_link("cell", cellular_profile());
  SimTime at = -1;
  net.set_receiver([&](const auto&) { at = sim.now(); });
  net.send("a", "b", cell, 0, "ping", Msg{});
  sim.run();
  EXPECT_DOUBLE_EQ(at, 30);
}

TEST(Network, FairShareSplitsBandwidth) {
  Simulator sim;
  Network<Msg> net(sim);
  LinkProfile p{8000, 0, LinkClass::Cellular};  // 1 byte per ms
  auto link = net.add_link("l", p);
  std::map<int, SimTime> arrivals;
  net.set_receiver([&](const auto& env) { arrivals[env.payload.tag] = sim.now(); });
  net.send("a", "b", link, 1000, "x", Msg{1});
  net.send("a", "c", link, 2000, "x", Msg{2});
  EXPECT_EQ(net.active_flows(link), 2u);
  sim.run();
  // both share until the first finishes at 2000 ms, then the second runs alone
  EXPECT_NEAR(arrivals[1], 2000, 1e-6);
  EXPECT_NEAR(arrivals[2], 3000, 1e-6);
}

TEST(Network, LateJoinerRecomputesShares) {
  Simulator sim;
  Network<Msg> net(sim);
  auto link = net.add_link("l", LinkProfile{8000, 0, LinkClass::Cellular});
  std::map<int, SimTime> arrivals;
  net.set_receiver([&](const auto& env) { arrivals[env.payload.tag] = sim.now(); });
  net.send("a", "b", link, 1000, "x", Msg{1});
  sim.schedule_at(500, [&] { net.send("a", "b", link, 250, "x", Msg{2}); });
  sim.run();
  // flow 1 has 500 left at t=500; both run at half rate until flow 2 ends at t=1000
  EXPECT_NEAR(arrivals[2], 1000, 1e-6);
  EXPECT_NEAR(arrivals[1], 1250, 1e-6);
}

TEST(Network, RatesNeverExceedBandwidth) {
  Simulator sim;
  Network<Msg> net(sim);
  auto link = net.add_link("l", cellular_profile());
  std::mt19937_64 rng(1);
  for (int i = 0; i < 40; ++i) {
    sim.schedule_at(static_cast<double>(rng() % 5000), [&, i] {
      net.send("a", "b", link, 1 + rng() % 100000, "x", Msg{i});
      double sum = 0;
      for (double r : net.current_rates(link)) sum += r;
      EXPECT_LE(sum, cellular_profile().bandwidth_bps * (1 + 1e-12));
    });
  }
  sim.run();
  const auto& c = net.counters(link);
  EXPECT_EQ(c.delivered, c.offered - c.dropped);
}

TEST(Network, InterceptorDropAndDuplicate) {
  Simulator sim;
  Network<Msg> net(sim);
  auto link = net.add_link("l", in_vehicle_profile());
  int received = 0;
  net.set_receiver([&](const auto&) { ++received; });
  net.set_interceptor([](const Network<Msg>::Envelope& env) {
    std::vector<Network<Msg>::Emission> out;
    if (env.payload.tag == 1) return out;  // drop
    out.push_back({env, 0});
    if (env.payload.tag == 2) out.push_back({env, 5});
    return out;
  });
  bool transmitted = false;
  net.send("a", "b", link, 10, "x", Msg{1}, [&] { transmitted = true; });
  net.send("a", "b", link, 10, "x", Msg{2});
  sim.run();
  EXPECT_TRUE(transmitted);
  EXPECT_EQ(received, 2);
  const auto& c = net.counters(link);
  EXPECT_EQ(c.dropped, 10u);
  EXPECT_EQ(c.delivered, c.offered - c.dropped);
}

TEST(Network, IdenticalRunsGiveIdenticalTraces) {
  auto run = [] {
    Simulator sim;
    Network<Msg> net(sim);
    auto a = net.add_link("a", cellular_profile());
    auto b = net.add_link("b", station_wire_profile());
    std::mt19937_64 rng(42);
    for (int i = 0; i < 100; ++i) {
      net.send("x", "y" + std::to_string(i % 3), (i % 2) ? a : b, rng() % 50000, "k", Msg{i});
    }
    sim.run();
    std::ostringstream os;
    write_trace_csv(os, net.trace());
    return os.str();
  };
  EXPECT_EQ(run(), run());
}

TEST(Network, InvalidProfilesRejected) {
  Simulator sim;
  Network<Msg> net(sim);
  EXPECT_THROW(net.add_link("bad", LinkProfile{0, 1, LinkClass::Cellular}), std::invalid_argument);
  EXPECT_THROW(net.add_link("bad", LinkProfile{1, -1, LinkClass::Cellular}), std::invalid_argument);
}
