#pragma once

#include <algorithm>
#include <concepts>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dmgsim/bi_scheduler.hpp"
#include "dmgsim/common.hpp"
#include "dmgsim/radio_link.hpp"
#include "dmgsim/traffic.hpp"

namespace dmgsim {

/// MAC constants. Every field is a scenario key under "mac".
struct MacParams {
  int cwMin = 15;
  int cwMax = 1023;
  Micros slot = 5;
  Micros perPacketOverhead = 6;
  int retryLimit = 7;
  Micros truncationOverhead = 10;
  Micros extensionOverhead = 10;
  bool truncation = true;
  bool extension = true;
  bool spatialSharing = false;
  double spatialMargin = 3.0;  // dB above the MCS threshold required under sharing
  Micros measurementOverhead = 50;
  bool tspecAdaptation = true;
  Micros tspecStep = 500;  // minDuration change per update
  int tspecRelaxBis = 5;   // consecutive good BIs before shrinking
  double suggestMinScale = 0.5;

  bool operator==(const MacParams&) const = default;
};

/// Channel time for one packet: payload airtime plus fixed per-packet overhead.
inline Micros packetTxTime(std::int64_t bits, double phyRate, const MacParams& mac) {
  return payloadAirtime(bits, phyRate) + mac.perPacketOverhead;
}

// ---------------------------------------------------------------------------
// ADDTS / admission

enum class Verdict { Accept, Reject, Suggest };

inline const char* toString(Verdict v) {
  switch (v) {
    case Verdict::Accept: return "ACCEPT";
    case Verdict::Reject: return "REJECT";
    case Verdict::Suggest: return "SUGGEST";
  }
  return "?";
}

struct AddtsRequest {
  std::uint64_t requestId = 0;
  TSpec tspec;
  Micros timestamp = 0;
  bool operator==(const AddtsRequest&) const = default;
};

struct AddtsResponse {
  std::uint64_t requestId = 0;
  Verdict verdict = Verdict::Reject;
  std::optional<TSpec> suggestedTspec;  // present iff Suggest
  bool operator==(const AddtsResponse&) const = default;
};

/// Admission verdict for a TSPEC against a schedule. Replaceable, e.g. by an agent.
using AdmissionPolicy = std::function<bool(const TSpec&, const Schedule&, const BiConfig&)>;

/// Baseline policy: admissible iff every period window can still host minDuration.
inline bool admissionCheck(const TSpec& t, const Schedule& s, const BiConfig& config) {
  try {
    placePeriodicAllocation(s, t, config);
    return true;
  } catch (const CapacityError&) {
    return false;
  }
}

/// The schedule with every SP owned by `flow` removed.
inline Schedule withoutFlow(const Schedule& s, FlowId flow) {
  Schedule out{s.biIndex, {}};
  for (const auto& a : s.allocations)
    if (!(a.isSp() && a.flowId == flow)) out.allocations.push_back(a);
  return out;
}

/// Largest admissible minDuration in [1, t.minDuration], or nullopt.
inline std::optional<Micros> largestAdmissibleDuration(const TSpec& t, const Schedule& s,
                                                       const BiConfig& config,
                                                       const AdmissionPolicy& policy) {
  auto fits = [&](Micros d) {
    TSpec probe = t;
    probe.minDuration = d;
    return policy(probe, s, config);
  };
  if (!fits(1)) return std::nullopt;
  Micros lo = 1, hi = t.minDuration;  // fits(lo) holds
  if (fits(hi)) return hi;
  while (hi - lo > 1) {
    const Micros mid = lo + (hi - lo) / 2;
    (fits(mid) ? lo : hi) = mid;
  }
  return lo;
}

/// PCP/AP side of the ADDTS exchange. A request for a flow that already holds
/// SPs is judged against the schedule without them (replacement).
inline AddtsResponse handleAddtsRequest(const AddtsRequest& req, const Schedule& s,
                                        const BiConfig& config, const MacParams& mac,
                                        const AdmissionPolicy& policy = admissionCheck) {
  validateTspec(req.tspec, config);
  const Schedule others = withoutFlow(s, req.tspec.flowId);
  AddtsResponse r{req.requestId, Verdict::Reject, std::nullopt};
  if (policy(req.tspec, others, config)) {
    r.verdict = Verdict::Accept;
    return r;
  }
  const auto best = largestAdmissibleDuration(req.tspec, others, config, policy);
  const auto floor = static_cast<Micros>(
      std::ceil(mac.suggestMinScale * static_cast<double>(req.tspec.minDuration)));
  if (best && *best >= std::max<Micros>(floor, 1)) {
    r.verdict = Verdict::Suggest;
    r.suggestedTspec = req.tspec;
    r.suggestedTspec->minDuration = *best;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Channel access execution

enum class TxOutcome { Success, Collision, Outage, Dropped };

inline const char* toString(TxOutcome o) {
  switch (o) {
    case TxOutcome::Success: return "SUCCESS";
    case TxOutcome::Collision: return "COLLISION";
    case TxOutcome::Outage: return "OUTAGE";
    case TxOutcome::Dropped: return "DROPPED";
  }
  return "?";
}

struct TxRecord {
  Micros time = 0;  // transmission start
  FlowId flowId = 0;
  std::int64_t bitsDelivered = 0;  // > 0 only on Success; dropped size on Dropped
  std::optional<McsIndex> mcsUsed;
  TxOutcome outcome = TxOutcome::Success;
  Micros airtime = 0;       // channel time consumed
  Micros packetArrival = 0; // arrival of the delivered packet
};

using TransmissionLog = std::vector<TxRecord>;

/// What channel-access execution needs from its surroundings: a clock that
/// delivers pending arrivals and blockage edges up to a time, the time of the
/// next such event, and the current state of a flow's link.
template <typename Ctx>
concept MacContext = requires(Ctx& c, Micros t, FlowId f) {
  { c.advanceTo(t) };
  { c.nextEventTime() } -> std::convertible_to<std::optional<Micros>>;
  { c.link(f) } -> std::convertible_to<LinkState>;
};

/// Context with no pending events and fixed links; useful for isolated runs.
struct StaticContext {
  std::map<FlowId, LinkState> links;
  void advanceTo(Micros) {}
  std::optional<Micros> nextEventTime() const { return std::nullopt; }
  LinkState link(FlowId f) const { return links.at(f); }
};

/// Per-contender binary exponential backoff state.
struct CbapState {
  int cw = 15;
  std::optional<std::int64_t> counter;
  int retries = 0;
  Rng rng;

  CbapState() = default;
  CbapState(const MacParams& mac, std::uint64_t seed, FlowId flow)
      : cw(mac.cwMin), rng(seed, flow, StreamPurpose::Backoff) {}
};

struct Contender {
  FlowId flowId = 0;
  FlowQueue* queue = nullptr;
  CbapState* state = nullptr;
};

/// Slotted CSMA/CA over [start, end). Backlogged contenders count down a
/// uniform backoff in [0, CW]; a lone zero transmits one packet, simultaneous
/// zeros collide and double their windows. Counters freeze at the period end.
template <MacContext Ctx>
void runCbap(Micros start, Micros end, std::vector<Contender>& contenders, Ctx& ctx,
             const McsTable& table, const MacParams& mac, TransmissionLog& log) {
  Micros t = start;
  std::vector<Contender*> active;
  std::vector<Contender*> zeros;
  std::vector<LinkState> links(contenders.size());
  while (t < end) {
    ctx.advanceTo(t);
    active.clear();
    for (std::size_t i = 0; i < contenders.size(); ++i) {
      auto& c = contenders[i];
      links[i] = ctx.link(c.flowId);
      if (c.queue->empty()) {
        c.state->counter.reset();
        continue;
      }
      if (links[i].inOutage()) continue;
      if (!c.state->counter)
        c.state->counter = static_cast<std::int64_t>(c.state->rng.uniformInt(c.state->cw));
      active.push_back(&c);
    }
    if (active.empty()) {
      const auto next = ctx.nextEventTime();
      if (!next || *next >= end) break;
      const Micros slots = (*next - t + mac.slot - 1) / mac.slot;
      t += std::max<Micros>(slots, 1) * mac.slot;
      continue;
    }
    zeros.clear();
    std::int64_t minCounter = *active.front()->state->counter;
    for (auto* c : active) {
      minCounter = std::min(minCounter, *c->state->counter);
      if (*c->state->counter == 0) zeros.push_back(c);
    }
    if (zeros.empty()) {
      std::int64_t k = minCounter;
      if (const auto next = ctx.nextEventTime(); next && *next > t)
        k = std::min<std::int64_t>(k, std::max<Micros>(1, (*next - t + mac.slot - 1) / mac.slot));
      const std::int64_t room = (end - t) / mac.slot;
      if (room <= 0) break;
      k = std::min(k, room);
      for (auto* c : active) *c->state->counter -= k;
      t += k * mac.slot;
      continue;
    }
    Micros busy = 0;
    for (auto* c : zeros) {
      const auto idx = static_cast<std::size_t>(c - contenders.data());
      busy = std::max(busy, packetTxTime(c->queue->front().sizeBits,
                                         table.rate(*links[idx].mcs), mac));
    }
    if (t + busy > end) break;
    if (zeros.size() == 1) {
      auto* c = zeros.front();
      const auto idx = static_cast<std::size_t>(c - contenders.data());
      const Packet p = c->queue->pop();
      log.push_back({t, c->flowId, p.sizeBits, links[idx].mcs, TxOutcome::Success, busy,
                     p.arrivalTime});
      c->state->cw = mac.cwMin;
      c->state->retries = 0;
      c->state->counter.reset();
    } else {
      for (auto* c : zeros) {
        const auto idx = static_cast<std::size_t>(c - contenders.data());
        log.push_back({t, c->flowId, 0, links[idx].mcs, TxOutcome::Collision, busy, 0});
        c->state->cw = std::min(2 * (c->state->cw + 1) - 1, mac.cwMax);
        c->state->counter.reset();
        if (++c->state->retries > mac.retryLimit) {
          const Packet p = c->queue->dropHead();
          log.push_back({t, c->flowId, p.sizeBits, links[idx].mcs, TxOutcome::Dropped, 0,
                         p.arrivalTime});
          c->state->retries = 0;
          c->state->cw = mac.cwMin;
        }
      }
    }
    t += busy;
  }
}

template <MacContext Ctx>
TransmissionLog runCbap(Micros start, Micros end, std::vector<Contender>& contenders, Ctx& ctx,
                        const McsTable& table, const MacParams& mac) {
  TransmissionLog log;
  runCbap(start, end, contenders, ctx, table, mac, log);
  return log;
}

/// Mean-renewal goodput of a lone saturated CBAP contender:
/// phyRate * payload / (payload + overhead + mean backoff).
inline double singleStationCbapGoodput(std::int64_t packetBits, double phyRate,
                                       const MacParams& mac) {
  const double payload = static_cast<double>(payloadAirtime(packetBits, phyRate));
  const double backoff = mac.cwMin / 2.0 * static_cast<double>(mac.slot);
  return phyRate * payload / (payload + mac.perPacketOverhead + backoff);
}

// ---------------------------------------------------------------------------
// Service periods

struct TruncationEvent {
  Micros time = 0;    // when the queue was found empty
  Micros newEnd = 0;  // end of the truncated SP (signalling included)
  Micros reclaimed = 0;
};

struct ExtensionEvent {
  Micros time = 0;   // scheduled end of the SP being extended
  Micros extra = 0;  // added SP length, signalling included
};

/// Truncates an in-progress SP whose queue has emptied before its end.
inline std::optional<TruncationEvent> maybeTruncate(Micros spEnd, const FlowQueue& q, Micros now,
                                                    const MacParams& mac) {
  if (!q.empty() || now >= spEnd) return std::nullopt;
  const Micros newEnd = std::min(spEnd, now + mac.truncationOverhead);
  return TruncationEvent{now, newEnd, spEnd - newEnd};
}

inline std::optional<TruncationEvent> maybeTruncate(const Allocation& sp, const FlowQueue& q,
                                                    Micros now, const MacParams& mac) {
  return maybeTruncate(sp.end(), q, now, mac);
}

struct ExtensionContext {
  Micros maxDuration = 0;  // TSPEC cap on total SP length
  double phyRate = 0.0;
  bool contendersBacklogged = false;  // other flows waiting for a following CBAP
  Micros guardTime = 0;
  Micros biDuration = 0;
};

/// Extends an SP that reached its scheduled end with backlog, into free time
/// or an uncontended CBAP that follows it. `sp` carries the current length.
inline std::optional<ExtensionEvent> maybeExtend(const Allocation& sp, const FlowQueue& q,
                                                 const Schedule& s, const ExtensionContext& ctx,
                                                 const MacParams& mac) {
  if (q.empty() || sp.spatialGroup) return std::nullopt;
  Micros gapEnd = ctx.biDuration;
  for (const auto& a : s.allocations) {
    if (a.allocId == sp.allocId || a.end() <= sp.end()) continue;
    if (a.kind == AllocKind::Cbap) {
      if (ctx.contendersBacklogged && a.startOffset <= sp.end() + ctx.guardTime)
        return std::nullopt;
      continue;
    }
    gapEnd = std::min(gapEnd, a.startOffset - ctx.guardTime);
  }
  const Micros gap = gapEnd - sp.end();
  Micros demand = mac.extensionOverhead;
  for (const auto& p : q.packets()) {
    demand += packetTxTime(p.sizeBits, ctx.phyRate, mac);
    if (demand >= gap) break;
  }
  const Micros extra = std::min({demand, gap, ctx.maxDuration - sp.duration});
  if (extra <= mac.extensionOverhead) return std::nullopt;
  return ExtensionEvent{sp.end(), extra};
}

/// Resumable server of one SP. Groups of concurrent SPs are executed by
/// stepping the runner with the earliest nextTime().
class SpRunner {
public:
  SpRunner(const Allocation& sp, FlowQueue& q, Micros serviceStart, Micros end, bool mayTruncate)
      : sp_(sp), q_(&q), next_(serviceStart), end_(end), mayTruncate_(mayTruncate) {}

  const Allocation& allocation() const { return sp_; }
  FlowQueue& queue() { return *q_; }
  bool done() const { return done_; }
  Micros nextTime() const { return next_; }
  Micros end() const { return end_; }
  /// When the SP stopped using the channel (truncation or natural end).
  Micros finishTime() const { return finish_; }
  bool endedWithBacklog() const { return done_ && !outage_ && !truncation_ && !q_->empty(); }
  const std::optional<TruncationEvent>& truncation() const { return truncation_; }
  bool hitOutage() const { return outage_; }

  /// One service decision at nextTime(). `mcs` is the link's current MCS
  /// (nullopt: outage) and `nextEvent` the time of the next pending arrival.
  void step(std::optional<McsIndex> mcs, const McsTable& table, const MacParams& mac,
            std::optional<Micros> nextEvent, TransmissionLog& log) {
    const Micros t = next_;
    if (t >= end_) return finish(end_);
    if (!mcs) {
      log.push_back({t, flow(), 0, std::nullopt, TxOutcome::Outage, 0, 0});
      outage_ = true;
      return finish(end_);
    }
    if (q_->empty()) {
      if (mayTruncate_) {
        truncation_ = maybeTruncate(end_, *q_, t, mac);
        return finish(truncation_->newEnd);
      }
      if (!nextEvent || *nextEvent >= end_) return finish(end_);
      next_ = std::max(t + 1, *nextEvent);
      return;
    }
    const Micros airtime = packetTxTime(q_->front().sizeBits, table.rate(*mcs), mac);
    if (t + airtime > end_) return finish(end_);
    const Packet p = q_->pop();
    log.push_back({t, flow(), p.sizeBits, mcs, TxOutcome::Success, airtime, p.arrivalTime});
    next_ = t + airtime;
    if (next_ >= end_) finish(end_);
  }

  /// Continues a finished SP for `extra` more microseconds, the first
  /// `overhead` of which are signalling.
  void extend(Micros extra, Micros overhead) {
    next_ = end_ + overhead;
    end_ += extra;
    sp_.duration += extra;
    done_ = false;
    extended_ = true;
  }
  bool extended() const { return extended_; }

private:
  FlowId flow() const { return sp_.flowId.value_or(0); }
  void finish(Micros at) {
    done_ = true;
    finish_ = at;
  }

  Allocation sp_;
  FlowQueue* q_;
  Micros next_;
  Micros end_;
  bool mayTruncate_;
  bool done_ = false;
  bool outage_ = false;
  bool extended_ = false;
  Micros finish_ = 0;
  std::optional<TruncationEvent> truncation_;
};

/// Serves one SP back-to-back at the link's MCS (no truncation, no extension).
template <MacContext Ctx>
TransmissionLog runSp(const Allocation& sp, FlowQueue& q, Ctx& ctx, const McsTable& table,
                      const MacParams& mac, bool mayTruncate = false) {
  TransmissionLog log;
  SpRunner r(sp, q, sp.startOffset, sp.end(), mayTruncate);
  while (!r.done()) {
    ctx.advanceTo(r.nextTime());
    r.step(LinkState(ctx.link(sp.flowId.value_or(0))).mcs, table, mac, ctx.nextEventTime(), log);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Spatial sharing

struct GroupingOptions {
  double marginDb = 3.0;
  Micros measurementOverhead = 50;
  /// Allocation period per flow; members never move before their period window.
  std::map<FlowId, Micros> periods;
  /// Optional veto on a pair (e.g. an agent forbidding it).
  std::function<bool(const Allocation&, const Allocation&)> allowPair;
  /// Link lookup; defaults to the unobstructed link from the world.
  std::function<LinkState(const Allocation&)> link;
};

struct GroupingResult {
  std::vector<Allocation> allocations;
  int groups = 0;
  Micros measurementTime = 0;
};

/// Measurement overhead paid at the start of a spatial group of `members` SPs.
inline Micros groupMeasurementTime(std::size_t members, Micros measurementOverhead) {
  return members > 1 ? static_cast<Micros>(members - 1) * measurementOverhead : 0;
}

/// Greedy pairwise-complete grouping of time-adjacent SPs. An SP joins the
/// preceding block when it is compatible with every member, the shared block
/// (measurement included) ends strictly before the SP's own end, and the SP
/// does not move before its period window. Members of a group start together,
/// each extended by the group's measurement time.
inline GroupingResult formSpatialGroups(std::vector<Allocation> sps, const World& world,
                                        const GroupingOptions& opt) {
  detail::sortAllocations(sps);
  auto linkOf = [&](const Allocation& a) {
    return opt.link ? opt.link(a) : resolveLink(world, *a.srcAid, *a.dstAid);
  };
  std::vector<LinkState> links;
  links.reserve(sps.size());
  for (const auto& a : sps) links.push_back(linkOf(a));

  struct Block {
    std::vector<std::size_t> members;
    Micros start;
    Micros maxDuration;
  };
  std::vector<Block> blocks;
  for (std::size_t i = 0; i < sps.size(); ++i) {
    const auto& sp = sps[i];
    if (!blocks.empty() && sp.isSp() && !sp.spatialGroup) {
      auto& b = blocks.back();
      bool ok = true;
      if (auto it = sp.flowId ? opt.periods.find(*sp.flowId) : opt.periods.end();
          it != opt.periods.end() && it->second > 0)
        ok = b.start >= (sp.startOffset / it->second) * it->second;
      for (std::size_t m : b.members) {
        if (!ok) break;
        ok = spatialCompatibility(links[m], links[i], world, opt.marginDb) &&
             (!opt.allowPair || opt.allowPair(sps[m], sp));
      }
      const Micros newEnd = b.start +
                            groupMeasurementTime(b.members.size() + 1, opt.measurementOverhead) +
                            std::max(b.maxDuration, sp.duration);
      if (ok && newEnd < sp.end()) {
        b.members.push_back(i);
        b.maxDuration = std::max(b.maxDuration, sp.duration);
        continue;
      }
    }
    blocks.push_back({{i}, sp.startOffset, sp.duration});
  }

  GroupingResult r;
  for (const auto& b : blocks) {
    if (b.members.size() == 1) {
      r.allocations.push_back(sps[b.members.front()]);
      continue;
    }
    const Micros meas = groupMeasurementTime(b.members.size(), opt.measurementOverhead);
    const std::uint32_t gid = sps[b.members.front()].allocId;
    for (std::size_t m : b.members) {
      Allocation a = sps[m];
      a.startOffset = b.start;
      a.duration += meas;
      a.spatialGroup = gid;
      r.allocations.push_back(a);
    }
    ++r.groups;
    r.measurementTime += meas;
  }
  detail::sortAllocations(r.allocations);
  return r;
}

// ---------------------------------------------------------------------------
// STA-side TSPEC adaptation

struct QosReport {
  Micros p95Delay = 0;
};

struct TspecPolicy {
  Micros step = 500;
  int relaxBis = 5;
  Micros floor = 1;  // smallest allowed minDuration (one max-size packet at current MCS)
};

struct TspecAdaptState {
  int belowCount = 0;
};

/// Hysteresis update: grow minDuration by one step while p95 delay exceeds the
/// target, shrink it after relaxBis consecutive BIs below half the target.
inline std::optional<TSpec> updateTspec(const TSpec& t, const QosReport& qos,
                                        const TspecPolicy& policy, TspecAdaptState& state) {
  if (!t.delayTarget) return std::nullopt;
  const Micros target = *t.delayTarget;
  if (qos.p95Delay > target) {
    state.belowCount = 0;
    const Micros grown = std::min(t.minDuration + policy.step, t.maxDuration);
    if (grown == t.minDuration) return std::nullopt;
    TSpec out = t;
    out.minDuration = grown;
    return out;
  }
  if (2 * qos.p95Delay < target) {
    if (++state.belowCount < policy.relaxBis) return std::nullopt;
    state.belowCount = 0;
    const Micros shrunk = std::max(t.minDuration - policy.step, policy.floor);
    if (shrunk >= t.minDuration) return std::nullopt;
    TSpec out = t;
    out.minDuration = shrunk;
    return out;
  }
  state.belowCount = 0;
  return std::nullopt;
}

}  // namespace dmgsim
