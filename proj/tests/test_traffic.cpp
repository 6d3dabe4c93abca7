#include <gtest/gtest.h>

#include <numeric>

#include "dmgsim/traffic.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace dmgsim;

namespace {

TrafficSource source(TrafficKind kind, double rate, std::int64_t size) {
  TrafficSource s;
  s.flowId = 1;
  s.srcAid = 1;
  s.dstAid = 2;
  s.kind = kind;
  s.meanRate = rate;
  s.packetSize = size;
  return s;
}

std::vector<Micros> times(ArrivalProcess& p, int n) {
  std::vector<Micros> out;
  for (int i = 0; i < n; ++i) out.push_back(p.nextArrival()->time);
  return out;
}

}  // namespace

TEST(Cbr, HundredMegabitInterval) {
  ArrivalProcess p(source(TrafficKind::Cbr, 100e6, 1500), 1);
  const auto t = times(p, 1000);
  for (std::size_t i = 1; i < t.size(); ++i) EXPECT_EQ(t[i] - t[i - 1], 120);
  EXPECT_EQ(oracle::cbrInterval(1500, 100e6), 120.0);
}

TEST(Cbr, FractionalIntervalDoesNotDrift) {
  ArrivalProcess p(source(TrafficKind::Cbr, 3e9, 1500), 1);  // 4 us exactly
  ArrivalProcess q(source(TrafficKind::Cbr, 7e8, 1500), 1);  // 17.142857 us
  const auto t = times(q, 7001);
  EXPECT_EQ(t.back() - t.front(), 120000);
  EXPECT_EQ(times(p, 3).back(), 8);
}

TEST(Cbr, StartAndStop) {
  auto s = source(TrafficKind::Cbr, 100e6, 1500);
  s.start = 1000;
  s.stop = 1240;
  ArrivalProcess p(s, 1);
  EXPECT_EQ(p.nextArrival()->time, 1000);
  EXPECT_EQ(p.nextArrival()->time, 1120);
  EXPECT_FALSE(p.nextArrival());
}

TEST(Poisson, SameSeedSameSequence) {
  ArrivalProcess a(source(TrafficKind::Poisson, 200e6, 1500), 77), b(source(TrafficKind::Poisson, 200e6, 1500), 77);
  EXPECT_EQ(times(a, 5000), times(b, 5000));
  ArrivalProcess c(source(TrafficKind::Poisson, 200e6, 1500), 78);
  EXPECT_NE(times(c, 50), times(a, 50));
}

TEST(Poisson, MeanRate) {
  ArrivalProcess p(source(TrafficKind::Poisson, 120e6, 1500), 5);
  const auto t = times(p, 50000);
  const double mean = static_cast<double>(t.back()) / (t.size() - 1);
  EXPECT_NEAR(mean, 100.0, 2.0);
}

TEST(Poisson, StreamsIndependentOfOtherFlows) {
  auto s1 = source(TrafficKind::Poisson, 200e6, 1500);
  auto s2 = s1;
  s2.flowId = 2;
  ArrivalProcess a(s1, 9), b(s2, 9);
  EXPECT_NE(times(a, 20), times(b, 20));
}

TEST(Vbr, MeanRateWithinFivePercent) {
  auto s = source(TrafficKind::VbrVideo, 400e6, 1500);
  s.frameInterval = 8333;
  s.frameJitter = 500;
  s.frameSizeSigma = 0.3;
  ArrivalProcess p(s, 1234);
  std::int64_t bits = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto a = p.nextArrival();
    bits += std::accumulate(a->packetBits.begin(), a->packetBits.end(), std::int64_t{0});
  }
  const double rate = bits / (10000.0 * 8333 / 1e6);
  EXPECT_NEAR(rate / 400e6, 1.0, 0.05);
}

TEST(Vbr, FragmentsAtMtuAndJitterBounded) {
  auto s = source(TrafficKind::VbrVideo, 400e6, 1500);
  s.frameInterval = 8333;
  s.frameJitter = 1e6;  // clamps to half the frame interval
  ArrivalProcess p(s, 3);
  for (int i = 0; i < 500; ++i) {
    const auto a = p.nextArrival();
    ASSERT_FALSE(a->packetBits.empty());
    for (std::size_t k = 0; k + 1 < a->packetBits.size(); ++k) EXPECT_EQ(a->packetBits[k], 12000);
    EXPECT_LE(a->packetBits.back(), 12000);
    EXPECT_LT(std::abs(a->time - i * 8333), 8333 / 2);
  }
}

TEST(FlowQueue, TailDropAndConservation) {
  FlowQueue q(1, 3000);  // 24000 bits
  EXPECT_EQ(q.enqueue({0, 12000}), DropDecision::Accepted);
  EXPECT_EQ(q.enqueue({1, 12000}), DropDecision::Accepted);
  EXPECT_EQ(q.enqueue({2, 8}), DropDecision::Dropped);
  EXPECT_EQ(q.droppedBits(), 8);
  EXPECT_EQ(q.droppedPackets(), 1);
  EXPECT_TRUE(q.conserved());
  q.pop();
  EXPECT_EQ(q.enqueue({3, 12000}), DropDecision::Accepted);
  q.dropHead();
  EXPECT_TRUE(q.conserved());
  EXPECT_EQ(q.inBits(), 36008);
  EXPECT_EQ(q.outBits(), 12000);
  EXPECT_EQ(q.droppedBits(), 12008);
  EXPECT_EQ(q.queuedBits(), 12000);
}

TEST(FlowQueue, DequeuePrefixRule) {
  FlowQueue q(1, 100000);
  for (int i = 0; i < 3; ++i) q.enqueue({i, 12000});
  EXPECT_TRUE(q.dequeueUpTo(0).empty());
  EXPECT_EQ(q.dequeueUpTo(20000).size(), 1u);
  EXPECT_EQ(q.dequeueUpTo(1'000'000).size(), 2u);
  EXPECT_TRUE(q.empty());
  EXPECT_TRUE(q.conserved());
}

TEST(FlowQueue, DequeueDoesNotSkipALargeHead) {
  FlowQueue q(1, 100000);
  q.enqueue({0, 20000});
  q.enqueue({1, 100});
  EXPECT_TRUE(q.dequeueUpTo(10000).empty());
}

// Random operation sequences keep FIFO order and conservation.
TEST(FlowQueue, RandomOperationsConserve) {
  gen::Gen g(42);
  for (int iter = 0; iter < 200; ++iter) {
    FlowQueue q(1, g.integer(100, 20000));
    Micros t = 0;
    for (int op = 0; op < 300; ++op) {
      switch (g.integer(0, 3)) {
        case 0:
        case 1: q.enqueue({t++, g.integer(8, 40000)}); break;
        case 2: q.dequeueUpTo(g.integer(0, 60000)); break;
        case 3:
          if (!q.empty()) q.dropHead();
          break;
      }
      ASSERT_TRUE(q.conserved());
      for (std::size_t k = 1; k < q.packets().size(); ++k)
        ASSERT_LT(q.packets()[k - 1].arrivalTime, q.packets()[k].arrivalTime);
      ASSERT_LE(q.queuedBits(), q.capacityBits());
    }
  }
}

TEST(Rng, StreamsAreDeterministic) {
  Rng a(5, 1, StreamPurpose::Backoff), b(5, 1, StreamPurpose::Backoff), c(5, 1, StreamPurpose::Arrivals);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.nextU64();
    EXPECT_EQ(x, b.nextU64());
    EXPECT_NE(x, c.nextU64());
  }
}

TEST(Rng, UniformIntInRange) {
  Rng r(1);
  std::vector<int> hist(16);
  for (int i = 0; i < 16000; ++i) ++hist[r.uniformInt(15)];
  for (int h : hist) EXPECT_NEAR(h, 1000, 150);
}

TEST(PayloadAirtime, RoundsUp) {
  EXPECT_EQ(payloadAirtime(12000, 6.75e9), 2);
  EXPECT_EQ(payloadAirtime(13500, 6.75e9), 2);
  EXPECT_EQ(payloadAirtime(13501, 6.75e9), 3);
  EXPECT_EQ(payloadAirtime(0, 1e9), 0);
}
