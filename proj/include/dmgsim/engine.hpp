#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmgsim/bi_scheduler.hpp"
#include "dmgsim/mac_protocol.hpp"
#include "dmgsim/metrics.hpp"
#include "dmgsim/radio_link.hpp"
#include "dmgsim/scenario.hpp"
#include "dmgsim/trace.hpp"
#include "dmgsim/traffic.hpp"

namespace dmgsim {

/// Per-flow outcome of one beacon interval.
struct FlowBiStats {
  FlowId flowId = 0;
  std::int64_t deliveredBits = 0;
  std::int64_t arrivedBits = 0;
  std::int64_t droppedBits = 0;
  std::int64_t droppedPackets = 0;
  std::int64_t packetsDelivered = 0;
  std::int64_t packetsOverTarget = 0;  // deliveries later than the flow's delay target
  double meanDelay = 0.0;
  double p95Delay = 0.0;
  double jitter = 0.0;
  Micros allocatedTime = 0;  // scheduled SP time in this BI
  McsIndex mcs = -1;         // link MCS at BI end, -1 in outage
  // Cumulative queue accounting at the BI boundary.
  std::int64_t inBits = 0;
  std::int64_t outBits = 0;
  std::int64_t totalDroppedBits = 0;
  std::int64_t queuedBits = 0;

  bool operator==(const FlowBiStats&) const = default;
};

struct BiMetrics {
  std::uint64_t biIndex = 0;
  std::vector<FlowBiStats> flows;
  Micros busyTime = 0;
  double utilization = 0.0;

  nlohmann::json toJson() const {
    nlohmann::json j = {{"biIndex", biIndex}, {"busyTime", busyTime}, {"utilization", utilization}};
    j["flows"] = nlohmann::json::array();
    for (const auto& f : flows)
      j["flows"].push_back({{"flowId", f.flowId},
                            {"deliveredBits", f.deliveredBits},
                            {"arrivedBits", f.arrivedBits},
                            {"droppedBits", f.droppedBits},
                            {"droppedPackets", f.droppedPackets},
                            {"packetsDelivered", f.packetsDelivered},
                            {"packetsOverTarget", f.packetsOverTarget},
                            {"meanDelay", f.meanDelay},
                            {"p95Delay", f.p95Delay},
                            {"jitter", f.jitter},
                            {"allocatedTime", f.allocatedTime},
                            {"mcs", f.mcs},
                            {"inBits", f.inBits},
                            {"outBits", f.outBits},
                            {"totalDroppedBits", f.totalDroppedBits},
                            {"queuedBits", f.queuedBits}});
    return j;
  }
  bool operator==(const BiMetrics&) const = default;
};

/// Agent-side overrides applied at a BI boundary. Empty means the baseline
/// heuristics decide everything.
struct Decisions {
  struct VerdictOverride {
    Verdict verdict = Verdict::Accept;
    double scale = 1.0;  // for Suggest
  };
  struct TspecProposal {
    Micros allocationPeriod = 0;
    Micros minDuration = 0;
  };
  struct PairToggle {
    FlowId a = 0;
    FlowId b = 0;
    bool allow = true;
  };
  std::map<std::uint64_t, VerdictOverride> verdicts;  // by requestId
  std::map<FlowId, Micros> spDurations;
  std::vector<PairToggle> spatialToggles;
  std::map<FlowId, TspecProposal> tspecUpdates;
  std::optional<double> mcsMargin;
};

struct DecisionReport {
  std::vector<std::string> notes;  // clamping and infeasibility remarks
  std::vector<AddtsResponse> responses;
};

struct RunResult {
  MetricsReport report;
  std::vector<BiMetrics> perBi;
  std::uint64_t traceHash = 0;
  std::uint64_t traceRecords = 0;
  std::vector<TraceRecord> trace;  // filled when TraceOptions::keep
};

/// Deterministic discrete-event simulator stepped one beacon interval at a
/// time. Pending events (arrivals, blockage edges, ADDTS requests) execute in
/// (time, insertion order); channel access advances the clock through them.
class Simulator {
public:
  explicit Simulator(Scenario sc, TraceOptions traceOptions = {})
      : sc_(std::move(sc)), world_(sc_.world()), trace_(traceOptions) {
    std::vector<TrafficSource> sources = sc_.flows;
    std::sort(sources.begin(), sources.end(),
              [](const TrafficSource& a, const TrafficSource& b) { return a.flowId < b.flowId; });
    flows_.reserve(sources.size());
    for (const auto& src : sources) {
      FlowRuntime f{src, FlowQueue(src.flowId, src.queueCapacity), ArrivalProcess(src, sc_.seed),
                    CbapState(sc_.mac, sc_.seed, src.flowId),
                    resolveLink(world_, src.srcAid, src.dstAid)};
      flows_.push_back(std::move(f));
    }
    for (std::size_t i = 0; i < flows_.size(); ++i) {
      index_[flows_[i].src.flowId] = i;
      scheduleNextArrival(i);
      contenders_.push_back({flows_[i].src.flowId, &flows_[i].queue, &flows_[i].cbap});
    }
    for (std::size_t i = 0; i < sc_.blockages.size(); ++i) {
      if (sc_.blockages[i].start < sc_.simDuration) push(sc_.blockages[i].start, EventType::BlockageOn, i);
      if (sc_.blockages[i].end < sc_.simDuration) push(sc_.blockages[i].end, EventType::BlockageOff, i);
    }
    for (std::size_t i = 0; i < sc_.tspecs.size(); ++i)
      push(sc_.tspecs[i].requestTime, EventType::Addts, i);
    advanceTo(0);
  }

  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  const Scenario& scenario() const { return sc_; }
  const World& world() const { return world_; }
  std::uint64_t biIndex() const { return bi_; }
  std::uint64_t biCount() const { return sc_.biCount(); }
  bool finished() const { return bi_ >= biCount(); }
  Micros now() const { return clock_; }
  const TraceSink& trace() const { return trace_; }
  const Schedule& lastSchedule() const { return schedule_; }
  const std::vector<AddtsRequest>& pendingRequests() const { return pending_; }
  const std::vector<BiMetrics>& biHistory() const { return history_; }

  std::vector<FlowId> flowIds() const {
    std::vector<FlowId> out;
    for (const auto& f : flows_) out.push_back(f.src.flowId);
    return out;
  }
  const FlowQueue& queue(FlowId f) const { return flows_.at(flowIndex(f)).queue; }
  const LinkState& link(FlowId f) const { return flows_.at(flowIndex(f)).link; }
  std::optional<TSpec> activeTspec(FlowId f) const { return flows_.at(flowIndex(f)).tspec; }
  const std::vector<Allocation>& placement(FlowId f) const { return flows_.at(flowIndex(f)).placement; }
  bool hasFlow(FlowId f) const { return index_.count(f) != 0; }

  /// SPs that the next BI will carry before spatial grouping.
  Schedule plannedServicePeriods() const {
    Schedule s{bi_, {}};
    for (const auto& f : flows_)
      s.allocations.insert(s.allocations.end(), f.placement.begin(), f.placement.end());
    detail::sortAllocations(s.allocations);
    return s;
  }

  /// Resolves pending ADDTS requests and applies agent overrides for the next
  /// BI. Throws MalformedAction, without side effects, on unknown ids.
  DecisionReport applyDecisions(const Decisions& d = {}) {
    if (finished()) throw ProtocolError("simulation already finished");
    for (const auto& [flow, _] : d.tspecUpdates)
      if (!hasFlow(flow)) throw MalformedAction("tspecUpdates: unknown flowId " + std::to_string(flow));
    for (const auto& [flow, _] : d.spDurations)
      if (!hasFlow(flow)) throw MalformedAction("durationAdjust: unknown flowId " + std::to_string(flow));
    for (const auto& t : d.spatialToggles)
      if (!hasFlow(t.a) || !hasFlow(t.b))
        throw MalformedAction("spatialGroupToggle: unknown flow pair " + std::to_string(t.a) + "/" +
                              std::to_string(t.b));
    for (const auto& [rid, _] : d.verdicts)
      if (std::none_of(pending_.begin(), pending_.end(),
                       [rid](const AddtsRequest& r) { return r.requestId == rid; }))
        throw MalformedAction("admission: unknown requestId " + std::to_string(rid));
    if (d.mcsMargin && !std::isfinite(*d.mcsMargin)) throw MalformedAction("mcsMargin: not finite");

    DecisionReport rep;
    const Micros at = static_cast<Micros>(bi_) * sc_.bi.biDuration;
    std::set<std::uint64_t> immediate;

    for (const auto& [flow, prop] : d.tspecUpdates) {
      FlowRuntime& f = flows_[flowIndex(flow)];
      TSpec t = f.tspec ? *f.tspec : baseTspec(flow);
      Micros period = std::clamp<Micros>(prop.allocationPeriod, 1, sc_.bi.biDuration);
      if (period != prop.allocationPeriod)
        rep.notes.push_back("tspecUpdates[" + std::to_string(flow) + "].allocationPeriod clamped");
      t.allocationPeriod = period;
      t.maxDuration = std::min(t.maxDuration, period);
      Micros minD = std::clamp<Micros>(prop.minDuration, 1, t.maxDuration);
      if (minD != prop.minDuration)
        rep.notes.push_back("tspecUpdates[" + std::to_string(flow) + "].minDuration clamped");
      t.minDuration = minD;
      std::erase_if(pending_, [flow](const AddtsRequest& r) { return r.tspec.flowId == flow; });
      submit(t, at);
      immediate.insert(pending_.back().requestId);
    }

    // Requests made during this BI take effect in the next one.
    std::vector<AddtsRequest> due, later;
    for (auto& r : pending_) (r.timestamp < at || immediate.count(r.requestId) ? due : later).push_back(r);
    pending_ = std::move(later);
    for (const auto& [rid, _] : d.verdicts)
      if (std::none_of(due.begin(), due.end(), [rid](const AddtsRequest& r) { return r.requestId == rid; }))
        rep.notes.push_back("admission[" + std::to_string(rid) + "]: request not due before the next BI, ignored");
    for (const auto& req : due) {
      const Schedule planned = plannedServicePeriods();
      AddtsResponse resp;
      try {
        resp = handleAddtsRequest(req, planned, sc_.bi, sc_.mac);
      } catch (const MalformedTspec& e) {
        rep.notes.push_back(std::string("request ") + std::to_string(req.requestId) + ": " + e.what());
        resp = {req.requestId, Verdict::Reject, std::nullopt};
      }
      if (auto it = d.verdicts.find(req.requestId); it != d.verdicts.end())
        resp = overrideVerdict(req, resp, it->second, planned, rep);
      ++admission_[resp.verdict];
      emit({at, TraceType::AddtsResponse, req.tspec.flowId, 0, std::nullopt, toString(resp.verdict)});
      rep.responses.push_back(resp);
      if (resp.verdict == Verdict::Accept)
        install(req.tspec, req.tspec.minDuration);
      else if (resp.verdict == Verdict::Suggest)
        install(*resp.suggestedTspec, resp.suggestedTspec->minDuration);
    }

    for (const auto& [flow, dur] : d.spDurations) {
      FlowRuntime& f = flows_[flowIndex(flow)];
      if (!f.tspec) {
        rep.notes.push_back("durationAdjust[" + std::to_string(flow) + "]: no active allocation");
        continue;
      }
      const Micros clamped = std::clamp(dur, f.tspec->minDuration, f.tspec->maxDuration);
      if (clamped != dur) rep.notes.push_back("durationAdjust[" + std::to_string(flow) + "] clamped");
      if (clamped == f.spDuration) continue;
      if (!install(*f.tspec, clamped))
        rep.notes.push_back("durationAdjust[" + std::to_string(flow) + "]: does not fit, unchanged");
    }

    for (const auto& t : d.spatialToggles) {
      const auto key = std::minmax(t.a, t.b);
      if (t.allow)
        forbidden_.erase(key);
      else
        forbidden_.insert(key);
    }

    if (d.mcsMargin) {
      const double m = std::clamp(*d.mcsMargin, 0.0, 30.0);
      if (m != *d.mcsMargin) rep.notes.push_back("mcsMargin clamped");
      world_.mcsMargin = m;
      for (auto& f : flows_) f.link = withAttenuation(f.link, f.link.attenuation, world_.mcsTable, m);
    }
    return rep;
  }

  /// Simulates the next beacon interval with the current allocations.
  const BiMetrics& runNextBi() {
    if (finished()) throw ProtocolError("simulation already finished");
    const Micros biStart = static_cast<Micros>(bi_) * sc_.bi.biDuration;
    const Micros biEnd = biStart + sc_.bi.biDuration;
    biBusy_ = 0;

    schedule_ = buildSchedule();
    const auto check = validateSchedule(schedule_, sc_.bi);
    if (!check.ok()) throw std::logic_error("engine produced an invalid schedule");

    emit({biStart, TraceType::BiStart, std::nullopt, static_cast<std::int64_t>(bi_)});
    for (const auto& r : serializeEse(schedule_)) {
      TraceRecord rec{biStart, TraceType::Ese, r.flowId, 0, std::nullopt, toString(r.kind)};
      rec.ese = r;
      emit(rec);
    }
    for (const auto& a : schedule_.allocations)
      if (a.isSp() && a.flowId) flows_[flowIndex(*a.flowId)].bi.allocated += a.duration;

    horizon_ = biEnd - 1;  // events at biEnd belong to the next BI
    execute(biStart);
    advanceTo(biEnd - 1);
    history_.push_back(closeBi());
    adaptTspecs(biEnd - 1);
    horizon_ = std::numeric_limits<Micros>::max();
    advanceTo(biEnd);
    ++bi_;
    return history_.back();
  }

  /// Metrics over every BI simulated so far.
  MetricsReport report() const {
    std::vector<FlowMetrics> fm;
    std::vector<std::vector<Micros>> delays;
    for (const auto& f : flows_) {
      FlowMetrics m;
      m.flowId = f.src.flowId;
      m.deliveredBits = f.queue.outBits();
      m.generatedBits = f.queue.inBits();
      m.droppedBits = f.queue.droppedBits();
      m.packetsDelivered = static_cast<std::int64_t>(f.delays.size());
      fm.push_back(m);
      delays.push_back(f.delays);
    }
    NetworkMetrics adm;
    adm.admissionAccepted = admissionCount(Verdict::Accept);
    adm.admissionRejected = admissionCount(Verdict::Reject);
    adm.admissionSuggested = admissionCount(Verdict::Suggest);
    const Micros elapsed = static_cast<Micros>(bi_) * sc_.bi.biDuration;
    const Micros dti = static_cast<Micros>(bi_) * sc_.bi.dtiDuration();
    return makeReport(elapsed, dti, busyTotal_, fm, delays, adm);
  }

private:
  enum class EventType { Arrival, BlockageOn, BlockageOff, Addts };

  struct Event {
    Micros time;
    std::uint64_t ordinal;
    EventType type;
    std::size_t index;
    bool operator>(const Event& o) const {
      return time != o.time ? time > o.time : ordinal > o.ordinal;
    }
  };

  struct BiAccum {
    std::int64_t delivered = 0, arrived = 0, dropped = 0, droppedPackets = 0, overTarget = 0;
    Micros allocated = 0;
    std::vector<Micros> delays;
  };

  struct FlowRuntime {
    TrafficSource src;
    FlowQueue queue;
    ArrivalProcess gen;
    CbapState cbap;
    LinkState link;
    std::optional<Arrival> nextArrival;
    std::optional<TSpec> tspec;
    std::vector<Allocation> placement;
    Micros spDuration = 0;
    TspecAdaptState adapt;
    BiAccum bi;
    std::vector<Micros> delays;
  };

  /// Adapter handing the MAC execution primitives a view of the event loop.
  struct Context {
    Simulator* sim;
    void advanceTo(Micros t) { sim->advanceTo(t); }
    std::optional<Micros> nextEventTime() const { return sim->nextEventTime(); }
    LinkState link(FlowId f) const { return sim->flows_[sim->flowIndex(f)].link; }
  };

  std::size_t flowIndex(FlowId f) const {
    auto it = index_.find(f);
    if (it == index_.end()) throw ReferenceError("unknown flow " + std::to_string(f));
    return it->second;
  }

  int admissionCount(Verdict v) const {
    auto it = admission_.find(v);
    return it == admission_.end() ? 0 : it->second;
  }

  // -- events ---------------------------------------------------------------

  void push(Micros t, EventType type, std::size_t index) {
    events_.push({t, ordinal_++, type, index});
  }

  void scheduleNextArrival(std::size_t i) {
    auto& f = flows_[i];
    f.nextArrival = f.gen.nextArrival();
    if (f.nextArrival && f.nextArrival->time < sc_.simDuration) push(f.nextArrival->time, EventType::Arrival, i);
  }

  std::optional<Micros> nextEventTime() const {
    if (events_.empty()) return std::nullopt;
    return events_.top().time;
  }

  void advanceTo(Micros t) {
    t = std::min(t, horizon_);
    flushLog();
    while (!events_.empty() && events_.top().time <= t) {
      const Event e = events_.top();
      events_.pop();
      clock_ = std::max(clock_, e.time);
      process(e);
    }
    clock_ = std::max(clock_, t);
  }

  void process(const Event& e) {
    switch (e.type) {
      case EventType::Arrival: {
        auto& f = flows_[e.index];
        for (std::int64_t bits : f.nextArrival->packetBits) {
          const Packet p{e.time, bits};
          f.bi.arrived += bits;
          if (f.queue.enqueue(p) == DropDecision::Accepted) {
            emit({e.time, TraceType::Arrival, f.src.flowId, bits});
          } else {
            f.bi.dropped += bits;
            ++f.bi.droppedPackets;
            emit({e.time, TraceType::Drop, f.src.flowId, bits, std::nullopt, "TAIL"});
          }
        }
        scheduleNextArrival(e.index);
        break;
      }
      case EventType::BlockageOn:
      case EventType::BlockageOff: {
        const auto& b = sc_.blockages[e.index];
        const bool on = e.type == EventType::BlockageOn;
        for (auto& f : flows_) {
          if (f.src.srcAid != b.srcAid || f.src.dstAid != b.dstAid) continue;
          f.link = on ? applyBlockage(f.link, b, world_.mcsTable, world_.mcsMargin)
                      : expireBlockage(f.link, b, world_.mcsTable, world_.mcsMargin);
        }
        TraceRecord r{e.time, on ? TraceType::BlockageOn : TraceType::BlockageOff};
        r.outcome = std::to_string(b.srcAid) + "->" + std::to_string(b.dstAid);
        emit(r);
        break;
      }
      case EventType::Addts:
        submit(sc_.tspecs[e.index].tspec, e.time);
        break;
    }
  }

  void submit(const TSpec& t, Micros at, std::optional<Micros> loggedAt = std::nullopt) {
    pending_.push_back({nextRequestId_++, t, at});
    emit({loggedAt.value_or(at), TraceType::AddtsRequest, t.flowId, 0, std::nullopt, std::to_string(pending_.back().requestId)});
  }

  void emit(const TraceRecord& r) { trace_.emit(r); }

  void markBusy(Micros start, Micros duration) {
    const Micros b = std::max(start, busyUntil_);
    const Micros e = start + duration;
    if (e > b) {
      busyTotal_ += e - b;
      biBusy_ += e - b;
      busyUntil_ = e;
    }
  }

  // -- transmission bookkeeping ----------------------------------------------

  void flushLog() {
    if (!log_) return;
    for (; flushed_ < log_->size(); ++flushed_) record((*log_)[flushed_]);
  }

  void record(const TxRecord& r) {
    auto& f = flows_[flowIndex(r.flowId)];
    switch (r.outcome) {
      case TxOutcome::Success: {
        const Micros delay = r.time + r.airtime - r.packetArrival;
        f.bi.delivered += r.bitsDelivered;
        f.bi.delays.push_back(delay);
        f.delays.push_back(delay);
        if (f.tspec && f.tspec->delayTarget && delay > *f.tspec->delayTarget) ++f.bi.overTarget;
        markBusy(r.time, r.airtime);
        emit({r.time, TraceType::Tx, r.flowId, r.bitsDelivered, r.mcsUsed, "SUCCESS", r.airtime});
        break;
      }
      case TxOutcome::Collision:
        markBusy(r.time, r.airtime);
        emit({r.time, TraceType::Tx, r.flowId, 0, r.mcsUsed, "COLLISION", r.airtime});
        break;
      case TxOutcome::Outage:
        emit({r.time, TraceType::Tx, r.flowId, 0, std::nullopt, "OUTAGE"});
        break;
      case TxOutcome::Dropped:
        f.bi.dropped += r.bitsDelivered;
        ++f.bi.droppedPackets;
        emit({r.time, TraceType::Drop, r.flowId, r.bitsDelivered, r.mcsUsed, "RETRY"});
        break;
    }
  }

  // -- scheduling -------------------------------------------------------------

  TSpec baseTspec(FlowId flow) const {
    const auto& src = flows_[flowIndex(flow)].src;
    for (const auto& r : sc_.tspecs)
      if (r.tspec.flowId == flow) return r.tspec;
    TSpec t;
    t.flowId = flow;
    t.srcAid = src.srcAid;
    t.dstAid = src.dstAid;
    t.allocationPeriod = sc_.bi.biDuration;
    t.minDuration = 1;
    t.maxDuration = sc_.bi.dtiDuration();
    return t;
  }

  /// Places `t` for its flow with the given SP length, replacing the flow's
  /// previous SPs. Leaves everything unchanged when it does not fit.
  bool install(const TSpec& t, Micros duration) {
    FlowRuntime& f = flows_[flowIndex(t.flowId)];
    const Schedule others = withoutFlow(plannedServicePeriods(), t.flowId);
    try {
      auto placed = placePeriodicAllocation(others, t, sc_.bi, {duration, nextAllocId_});
      nextAllocId_ += static_cast<AllocId>(placed.size());
      f.placement = std::move(placed);
      f.tspec = t;
      f.spDuration = std::clamp(duration, t.minDuration, t.maxDuration);
      return true;
    } catch (const CapacityError&) {
      return false;
    }
  }

  AddtsResponse overrideVerdict(const AddtsRequest& req, const AddtsResponse& baseline,
                                const Decisions::VerdictOverride& o, const Schedule& planned,
                                DecisionReport& rep) {
    const std::string who = "admission[" + std::to_string(req.requestId) + "]";
    AddtsResponse r{req.requestId, o.verdict, std::nullopt};
    switch (o.verdict) {
      case Verdict::Reject:
        return r;
      case Verdict::Accept:
        if (baseline.verdict != Verdict::Accept) rep.notes.push_back(who + ": ACCEPT infeasible, baseline kept");
        return baseline;
      case Verdict::Suggest: {
        const double scale = std::clamp(o.scale, 1e-9, 1.0);
        if (scale != o.scale) rep.notes.push_back(who + ".scale clamped");
        TSpec t = req.tspec;
        t.minDuration = std::max<Micros>(1, std::llround(scale * static_cast<double>(t.minDuration)));
        if (!admissionCheck(t, withoutFlow(planned, t.flowId), sc_.bi)) {
          rep.notes.push_back(who + ": suggested TSPEC inadmissible, rejected");
          r.verdict = Verdict::Reject;
          return r;
        }
        r.suggestedTspec = t;
        return r;
      }
    }
    return r;
  }

  Schedule buildSchedule() {
    Schedule planned = plannedServicePeriods();
    std::vector<Allocation> sps = planned.allocations;
    if (sc_.mac.spatialSharing && sps.size() > 1) {
      GroupingOptions opt;
      opt.marginDb = sc_.mac.spatialMargin;
      opt.measurementOverhead = sc_.mac.measurementOverhead;
      for (const auto& f : flows_)
        if (f.tspec) opt.periods[f.src.flowId] = f.tspec->allocationPeriod;
      opt.link = [this](const Allocation& a) { return flows_[flowIndex(*a.flowId)].link; };
      if (!forbidden_.empty())
        opt.allowPair = [this](const Allocation& a, const Allocation& b) {
          return !forbidden_.count(std::minmax(*a.flowId, *b.flowId));
        };
      sps = formSpatialGroups(sps, world_, opt).allocations;
    }
    return buildBeaconInterval(sc_.bi, sps, bi_);
  }

  // -- execution --------------------------------------------------------------

  void execute(Micros biStart) {
    Context ctx{this};
    const auto& allocs = schedule_.allocations;
    Micros cursor = biStart + sc_.bi.bhiDuration;
    for (std::size_t i = 0; i < allocs.size();) {
      std::size_t j = i + 1;
      if (allocs[i].spatialGroup)
        while (j < allocs.size() && allocs[j].spatialGroup == allocs[i].spatialGroup) ++j;
      Micros blockEnd = 0;
      for (std::size_t k = i; k < j; ++k) blockEnd = std::max(blockEnd, biStart + allocs[k].end());
      if (allocs[i].kind == AllocKind::Cbap) {
        const Micros s = std::max(biStart + allocs[i].startOffset, cursor);
        if (s < blockEnd) runCbapPeriod(ctx, s, blockEnd, "SCHEDULED");
      } else {
        const Micros finish = runSpBlock(ctx, biStart, i, j, cursor);
        if (finish < blockEnd && sc_.bi.defaultCbap) runCbapPeriod(ctx, finish, blockEnd, "RECLAIMED");
        blockEnd = std::max(blockEnd, finish);
      }
      cursor = std::max(cursor, blockEnd);
      i = j;
    }
  }

  void runCbapPeriod(Context& ctx, Micros start, Micros end, const char* why) {
    advanceTo(start);
    emit({start, TraceType::CbapStart, std::nullopt, 0, std::nullopt, why, 0});
    TransmissionLog log;
    log_ = &log;
    flushed_ = 0;
    runCbap(start, end, contenders_, ctx, world_.mcsTable, sc_.mac, log);
    flushLog();
    log_ = nullptr;
    advanceTo(end);
    emit({end, TraceType::CbapEnd});
  }

  std::optional<McsIndex> sharedMcs(const std::vector<SpRunner>& runners, std::size_t me) {
    const auto& l = flows_[flowIndex(*runners[me].allocation().flowId)].link;
    if (runners.size() == 1) return l.mcs;
    std::vector<Interferer> others;
    for (std::size_t k = 0; k < runners.size(); ++k) {
      if (k == me || runners[k].done()) continue;
      const auto& o = flows_[flowIndex(*runners[k].allocation().flowId)].link;
      others.push_back({o.srcAid, o.bestTxSector});
    }
    if (others.empty()) return l.mcs;
    return selectMcs(sinr(l, others, world_), world_.mcsTable, world_.mcsMargin);
  }

  /// Runs the SPs allocs[i, j) (one SP or one spatial group); returns when
  /// the last of them released the channel.
  Micros runSpBlock(Context& ctx, Micros biStart, std::size_t i, std::size_t j, Micros cursor) {
    const auto& allocs = schedule_.allocations;
    const Micros start = std::max(biStart + allocs[i].startOffset, cursor);
    const Micros meas = groupMeasurementTime(j - i, sc_.mac.measurementOverhead);
    const bool grouped = j - i > 1;
    advanceTo(start);
    std::vector<SpRunner> runners;
    for (std::size_t k = i; k < j; ++k) {
      const auto& a = allocs[k];
      emit({start, TraceType::SpStart, a.flowId, 0, std::nullopt, std::to_string(a.allocId)});
      runners.emplace_back(a, flows_[flowIndex(*a.flowId)].queue, start + meas, biStart + a.end(),
                           sc_.mac.truncation);
    }
    if (meas > 0) {
      markBusy(start, meas);
      emit({start, TraceType::Measure, std::nullopt, 0, std::nullopt, std::to_string(j - i), meas});
    }

    TransmissionLog log;
    log_ = &log;
    flushed_ = 0;
    while (true) {
      std::size_t pick = runners.size();
      for (std::size_t k = 0; k < runners.size(); ++k)
        if (!runners[k].done() && (pick == runners.size() || runners[k].nextTime() < runners[pick].nextTime()))
          pick = k;
      if (pick == runners.size()) break;
      SpRunner& r = runners[pick];
      const Micros t = r.nextTime();
      advanceTo(t);
      r.step(sharedMcs(runners, pick), world_.mcsTable, sc_.mac, nextEventTime(), log);
      flushLog();
      if (!r.done()) continue;
      if (const auto& tr = r.truncation()) {
        markBusy(tr->time, tr->newEnd - tr->time);
        emit({tr->time, TraceType::Truncate, r.allocation().flowId, tr->reclaimed, std::nullopt, "",
              tr->newEnd - tr->time});
      } else if (!grouped && sc_.mac.extension && !r.extended() && r.endedWithBacklog()) {
        tryExtend(r, biStart);
      }
    }
    log_ = nullptr;
    Micros finish = start;
    for (const auto& r : runners) finish = std::max(finish, r.finishTime());
    advanceTo(finish);
    for (const auto& r : runners)
      emit({finish, TraceType::SpEnd, r.allocation().flowId, 0, std::nullopt,
            std::to_string(r.allocation().allocId)});
    (void)ctx;
    return finish;
  }

  void tryExtend(SpRunner& r, Micros biStart) {
    const FlowId flow = *r.allocation().flowId;
    auto& f = flows_[flowIndex(flow)];
    if (!f.tspec || f.link.inOutage()) return;
    bool othersBacklogged = false;
    for (const auto& o : flows_)
      if (o.src.flowId != flow && !o.queue.empty() && !o.link.inOutage()) othersBacklogged = true;
    ExtensionContext ec{f.tspec->maxDuration, world_.mcsTable.rate(*f.link.mcs), othersBacklogged,
                        sc_.bi.guardTime, sc_.bi.biDuration};
    Allocation current = r.allocation();  // offsets relative to the BI
    const auto ext = maybeExtend(current, f.queue, schedule_, ec, sc_.mac);
    if (!ext) return;
    const Micros at = biStart + ext->time;
    advanceTo(at);
    r.extend(ext->extra, sc_.mac.extensionOverhead);
    markBusy(at, sc_.mac.extensionOverhead);
    emit({at, TraceType::Extend, flow, 0, std::nullopt, std::to_string(ext->extra),
          sc_.mac.extensionOverhead});
  }

  // -- BI close-out -----------------------------------------------------------

  BiMetrics closeBi() {
    BiMetrics m;
    m.biIndex = bi_;
    m.busyTime = biBusy_;
    m.utilization = static_cast<double>(biBusy_) / static_cast<double>(sc_.bi.dtiDuration());
    for (auto& f : flows_) {
      FlowBiStats s;
      s.flowId = f.src.flowId;
      s.deliveredBits = f.bi.delivered;
      s.arrivedBits = f.bi.arrived;
      s.droppedBits = f.bi.dropped;
      s.droppedPackets = f.bi.droppedPackets;
      s.packetsDelivered = static_cast<std::int64_t>(f.bi.delays.size());
      s.packetsOverTarget = f.bi.overTarget;
      const auto d = summarizeDelays(f.bi.delays);
      s.meanDelay = d.mean;
      s.p95Delay = d.p95;
      s.jitter = d.jitter;
      s.allocatedTime = f.bi.allocated;
      s.mcs = f.link.mcs.value_or(-1);
      s.inBits = f.queue.inBits();
      s.outBits = f.queue.outBits();
      s.totalDroppedBits = f.queue.droppedBits();
      s.queuedBits = f.queue.queuedBits();
      m.flows.push_back(s);
      f.bi = {};
    }
    return m;
  }

  /// Baseline STA-side behaviour: flows missing their delay target ask for
  /// more SP time, flows comfortably under it give some back.
  void adaptTspecs(Micros at) {
    if (!sc_.mac.tspecAdaptation) return;
    const auto& stats = history_.back().flows;
    for (std::size_t i = 0; i < flows_.size(); ++i) {
      auto& f = flows_[i];
      if (!f.tspec || !f.tspec->delayTarget) continue;
      QosReport q{static_cast<Micros>(stats[i].p95Delay)};
      if (stats[i].packetsDelivered == 0 && !f.queue.empty())
        q.p95Delay = at - f.queue.front().arrivalTime;
      const double rate = f.link.mcs ? world_.mcsTable.rate(*f.link.mcs) : world_.mcsTable.lowest().phyRate;
      TspecPolicy policy{sc_.mac.tspecStep, sc_.mac.tspecRelaxBis,
                         packetTxTime(f.src.packetBits(), rate, sc_.mac)};
      if (auto t = updateTspec(*f.tspec, q, policy, f.adapt)) {
        const FlowId id = f.src.flowId;
        std::erase_if(pending_, [id](const AddtsRequest& r) { return r.tspec.flowId == id; });
        submit(*t, at, at + 1);  // logged once the BI has closed
      }
    }
  }

  Scenario sc_;
  World world_;
  TraceSink trace_;
  std::vector<FlowRuntime> flows_;
  std::map<FlowId, std::size_t> index_;
  std::vector<Contender> contenders_;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> events_;
  std::uint64_t ordinal_ = 0;
  Micros horizon_ = std::numeric_limits<Micros>::max();
  Micros clock_ = 0;
  std::uint64_t bi_ = 0;
  std::vector<AddtsRequest> pending_;
  std::uint64_t nextRequestId_ = 1;
  AllocId nextAllocId_ = 1;
  std::set<std::pair<FlowId, FlowId>> forbidden_;
  std::map<Verdict, int> admission_;
  Schedule schedule_;
  std::vector<BiMetrics> history_;
  Micros busyUntil_ = 0;
  Micros busyTotal_ = 0;
  Micros biBusy_ = 0;
  TransmissionLog* log_ = nullptr;
  std::size_t flushed_ = 0;
};

/// Batch run: the baseline heuristics decide at every BI boundary.
inline RunResult run(const Scenario& sc, TraceOptions opt = {}) {
  Simulator sim(sc, opt);
  while (!sim.finished()) {
    sim.applyDecisions();
    sim.runNextBi();
  }
  RunResult r;
  r.report = sim.report();
  r.perBi = sim.biHistory();
  r.traceHash = sim.trace().hash();
  r.traceRecords = sim.trace().count();
  r.trace = sim.trace().records();
  return r;
}

}  // namespace dmgsim
