#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "dmgsim/common.hpp"

namespace dmgsim {

enum class TrafficKind { Cbr, Poisson, VbrVideo };

inline const char* toString(TrafficKind k) {
  switch (k) {
    case TrafficKind::Cbr: return "CBR";
    case TrafficKind::Poisson: return "POISSON";
    case TrafficKind::VbrVideo: return "VBR_VIDEO";
  }
  return "?";
}

inline std::optional<TrafficKind> trafficKindFromString(const std::string& s) {
  if (s == "CBR") return TrafficKind::Cbr;
  if (s == "POISSON") return TrafficKind::Poisson;
  if (s == "VBR_VIDEO") return TrafficKind::VbrVideo;
  return std::nullopt;
}

inline constexpr std::int64_t kDefaultQueueCapacityBytes = 2'000'000;

struct TrafficSource {
  FlowId flowId = 0;
  Aid srcAid = 0;
  Aid dstAid = 0;
  TrafficKind kind = TrafficKind::Cbr;
  double meanRate = 100e6;       // bit/s
  std::int64_t packetSize = 1500;  // bytes (CBR, Poisson); MTU for VBR fragments
  // VBR video
  Micros frameInterval = 16'667;
  double frameJitter = 0.0;     // std. dev. of frame arrival jitter, us
  double frameSizeSigma = 0.2;  // sigma of log frame size
  Micros start = 0;
  std::optional<Micros> stop;  // exclusive; unset runs to the end of the simulation
  std::int64_t queueCapacity = kDefaultQueueCapacityBytes;  // bytes

  std::int64_t packetBits() const { return packetSize * 8; }
  bool operator==(const TrafficSource&) const = default;
};

struct Packet {
  Micros arrivalTime = 0;
  std::int64_t sizeBits = 0;
  bool operator==(const Packet&) const = default;
};

/// One arrival instant. CBR and Poisson deliver one packet; a VBR frame arrives
/// as a burst of MTU-sized fragments.
struct Arrival {
  Micros time = 0;
  std::vector<std::int64_t> packetBits;
};

/// Stateful arrival generator for one source. Arrival instants are derived
/// from an exact running clock so integer rounding never accumulates.
class ArrivalProcess {
public:
  ArrivalProcess(const TrafficSource& src, std::uint64_t seed)
      : src_(src),
        arrivals_(seed, src.flowId, StreamPurpose::Arrivals),
        frameSize_(seed, src.flowId, StreamPurpose::FrameSize),
        jitter_(seed, src.flowId, StreamPurpose::FrameJitter) {}

  const TrafficSource& source() const { return src_; }

  /// Next arrival, or nullopt once the source has stopped.
  std::optional<Arrival> nextArrival() {
    Arrival a;
    switch (src_.kind) {
      case TrafficKind::Cbr: {
        const double interval = src_.packetBits() * 1e6 / src_.meanRate;
        a.time = src_.start + static_cast<Micros>(std::floor(count_ * interval + 1e-6));
        a.packetBits.push_back(src_.packetBits());
        break;
      }
      case TrafficKind::Poisson: {
        clock_ += arrivals_.exponential(src_.packetBits() * 1e6 / src_.meanRate);
        a.time = src_.start + static_cast<Micros>(std::floor(clock_));
        a.packetBits.push_back(src_.packetBits());
        break;
      }
      case TrafficKind::VbrVideo: {
        const Micros nominal = src_.start + count_ * src_.frameInterval;
        const double bound = static_cast<double>(std::max<Micros>(0, src_.frameInterval / 2 - 1));
        const double j = std::clamp(jitter_.normal() * src_.frameJitter, -bound, bound);
        a.time = std::max(src_.start, nominal + static_cast<Micros>(std::llround(j)));
        fragment(drawFrameBits(), a.packetBits);
        break;
      }
    }
    ++count_;
    if (src_.stop && a.time >= *src_.stop) return std::nullopt;
    return a;
  }

  /// Mean VBR frame size implied by meanRate and frameInterval.
  double meanFrameBits() const { return src_.meanRate * src_.frameInterval / 1e6; }

private:
  std::int64_t drawFrameBits() {
    const double mean = meanFrameBits();
    const double sigma = src_.frameSizeSigma;
    const double mu = std::log(mean) - sigma * sigma / 2.0;
    const double x = std::min(std::exp(mu + sigma * frameSize_.normal()), 8.0 * mean);
    return std::max<std::int64_t>(8, std::llround(x / 8.0) * 8);
  }

  void fragment(std::int64_t frameBits, std::vector<std::int64_t>& out) const {
    const std::int64_t mtu = src_.packetBits();
    for (; frameBits > mtu; frameBits -= mtu) out.push_back(mtu);
    if (frameBits > 0) out.push_back(frameBits);
  }

  TrafficSource src_;
  Rng arrivals_;
  Rng frameSize_;
  Rng jitter_;
  std::int64_t count_ = 0;
  double clock_ = 0.0;
};

enum class DropDecision { Accepted, Dropped };

/// Tail-drop FIFO with bit-level accounting:
/// inBits == outBits + droppedBits + queuedBits always.
class FlowQueue {
public:
  FlowQueue() = default;
  FlowQueue(FlowId flowId, std::int64_t capacityBytes)
      : flowId_(flowId), capacityBits_(capacityBytes * 8) {}

  FlowId flowId() const { return flowId_; }
  std::int64_t capacityBits() const { return capacityBits_; }

  DropDecision enqueue(const Packet& p) {
    inBits_ += p.sizeBits;
    if (queuedBits_ + p.sizeBits > capacityBits_) {
      droppedBits_ += p.sizeBits;
      ++droppedPackets_;
      return DropDecision::Dropped;
    }
    queuedBits_ += p.sizeBits;
    packets_.push_back(p);
    return DropDecision::Accepted;
  }

  /// Longest FIFO prefix whose total size fits the budget; packets are never split.
  std::vector<Packet> dequeueUpTo(std::int64_t budgetBits) {
    std::vector<Packet> out;
    while (!packets_.empty() && packets_.front().sizeBits <= budgetBits) {
      budgetBits -= packets_.front().sizeBits;
      out.push_back(pop());
    }
    return out;
  }

  const Packet& front() const { return packets_.front(); }

  /// Removes the head as delivered.
  Packet pop() {
    Packet p = packets_.front();
    packets_.pop_front();
    queuedBits_ -= p.sizeBits;
    outBits_ += p.sizeBits;
    return p;
  }

  /// Removes the head as dropped (retry limit).
  Packet dropHead() {
    Packet p = packets_.front();
    packets_.pop_front();
    queuedBits_ -= p.sizeBits;
    droppedBits_ += p.sizeBits;
    ++droppedPackets_;
    return p;
  }

  bool empty() const { return packets_.empty(); }
  std::size_t size() const { return packets_.size(); }
  const std::deque<Packet>& packets() const { return packets_; }

  std::int64_t inBits() const { return inBits_; }
  std::int64_t outBits() const { return outBits_; }
  std::int64_t droppedBits() const { return droppedBits_; }
  std::int64_t queuedBits() const { return queuedBits_; }
  std::int64_t droppedPackets() const { return droppedPackets_; }

  bool conserved() const { return inBits_ == outBits_ + droppedBits_ + queuedBits_; }

private:
  FlowId flowId_ = 0;
  std::int64_t capacityBits_ = kDefaultQueueCapacityBytes * 8;
  std::deque<Packet> packets_;
  std::int64_t inBits_ = 0;
  std::int64_t outBits_ = 0;
  std::int64_t droppedBits_ = 0;
  std::int64_t queuedBits_ = 0;
  std::int64_t droppedPackets_ = 0;
};

}  // namespace dmgsim
