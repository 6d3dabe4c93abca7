#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmgsim/engine.hpp"
#include "dmgsim/metrics.hpp"
#include "dmgsim/scenario.hpp"

namespace dmgsim {

/// Per-flow observation fields, in vector order.
inline const std::vector<std::string>& flowObservationFields() {
  static const std::vector<std::string> names = {"queuedBits",     "arrivalRateEwma",
                                                 "p95DelayLastBi", "dropCountLastBi",
                                                 "currentMcsIndex", "allocatedTimeLastBi"};
  return names;
}

/// Network observation fields, appended after all flows.
inline const std::vector<std::string>& networkObservationFields() {
  static const std::vector<std::string> names = {"dtiUtilization", "biIndex", "pendingAddtsRequests"};
  return names;
}

/// Length of Observation::vector() for `flows` flows.
inline std::size_t observationSize(std::size_t flows) {
  return flows * flowObservationFields().size() + networkObservationFields().size();
}

struct FlowObservation {
  FlowId flowId = 0;
  double queuedBits = 0.0;
  double arrivalRateEwma = 0.0;  // bit/s
  double p95DelayLastBi = 0.0;   // µs
  double dropCountLastBi = 0.0;  // packets
  double currentMcsIndex = -1.0; // -1 in outage
  double allocatedTimeLastBi = 0.0;
  bool operator==(const FlowObservation&) const = default;
};

struct PendingSummary {
  std::uint64_t requestId = 0;
  FlowId flowId = 0;
  Micros allocationPeriod = 0;
  Micros minDuration = 0;
  Micros maxDuration = 0;
  Micros timestamp = 0;
  bool operator==(const PendingSummary&) const = default;
};

struct Observation {
  std::vector<FlowObservation> flows;  // ascending flowId
  double dtiUtilization = 0.0;
  std::uint64_t biIndex = 0;
  std::vector<PendingSummary> pending;

  /// Flat numeric view: flows in order, then the network fields.
  std::vector<double> vector() const {
    std::vector<double> v;
    v.reserve(observationSize(flows.size()));
    for (const auto& f : flows)
      v.insert(v.end(), {f.queuedBits, f.arrivalRateEwma, f.p95DelayLastBi, f.dropCountLastBi,
                         f.currentMcsIndex, f.allocatedTimeLastBi});
    v.push_back(dtiUtilization);
    v.push_back(static_cast<double>(biIndex));
    v.push_back(static_cast<double>(pending.size()));
    return v;
  }

  nlohmann::json toJson() const {
    nlohmann::json j;
    j["vector"] = vector();
    j["flowIds"] = nlohmann::json::array();
    for (const auto& f : flows) j["flowIds"].push_back(f.flowId);
    j["biIndex"] = biIndex;
    j["dtiUtilization"] = dtiUtilization;
    j["pending"] = nlohmann::json::array();
    for (const auto& p : pending)
      j["pending"].push_back({{"requestId", p.requestId},
                              {"flowId", p.flowId},
                              {"allocationPeriod", p.allocationPeriod},
                              {"minDuration", p.minDuration},
                              {"maxDuration", p.maxDuration},
                              {"timestamp", p.timestamp}});
    return j;
  }

  bool operator==(const Observation&) const = default;
};

/// Layout message sent in the HELLO reply.
inline nlohmann::json observationLayout(const std::vector<FlowId>& flowIds) {
  return {{"flowFields", flowObservationFields()},
          {"networkFields", networkObservationFields()},
          {"flowIds", flowIds},
          {"size", observationSize(flowIds.size())}};
}

struct RewardWeights {
  double wThroughput = 1.0;
  double wDelayViolation = -1.0;
  double wJitter = 0.0;
  double wFairness = 1.0;
  double wDrops = -1.0;
  bool operator==(const RewardWeights&) const = default;
};

inline RewardWeights rewardWeightsFromJson(const nlohmann::json& j) {
  if (!j.is_object()) throw MalformedAction("weights: expected an object");
  RewardWeights w;
  auto read = [&](const char* key, double& out) {
    if (auto it = j.find(key); it != j.end()) {
      if (!it->is_number() || !std::isfinite(it->get<double>()))
        throw MalformedAction(std::string("weights.") + key + ": expected a finite number");
      out = it->get<double>();
    }
  };
  read("wThroughput", w.wThroughput);
  read("wDelayViolation", w.wDelayViolation);
  read("wJitter", w.wJitter);
  read("wFairness", w.wFairness);
  read("wDrops", w.wDrops);
  return w;
}

/// Normalized per-BI terms the reward is a weighted sum of. Each lies in [0, 1].
struct RewardTerms {
  double throughput = 0.0;      // aggregate delivered rate / top PHY rate
  double delayViolation = 0.0;  // share of delivered packets later than their target
  double jitter = 0.0;          // mean per-flow jitter / BI duration
  double fairness = 1.0;        // Jain index over per-flow delivered bits
  double drops = 0.0;           // dropped bits / arrived bits

  double weighted(const RewardWeights& w) const {
    return w.wThroughput * throughput + w.wDelayViolation * delayViolation + w.wJitter * jitter +
           w.wFairness * fairness + w.wDrops * drops;
  }
};

inline RewardTerms rewardTerms(const BiMetrics& m, Micros biDuration, double topRate) {
  RewardTerms t;
  double delivered = 0.0, arrived = 0.0, dropped = 0.0, jitter = 0.0;
  std::int64_t packets = 0, late = 0;
  std::vector<double> perFlow;
  for (const auto& f : m.flows) {
    delivered += static_cast<double>(f.deliveredBits);
    arrived += static_cast<double>(f.arrivedBits);
    dropped += static_cast<double>(f.droppedBits);
    jitter += f.jitter;
    packets += f.packetsDelivered;
    late += f.packetsOverTarget;
    perFlow.push_back(static_cast<double>(f.deliveredBits));
  }
  const double seconds = static_cast<double>(biDuration) / kMicrosPerSecond;
  t.throughput = std::min(1.0, delivered / seconds / topRate);
  t.delayViolation = packets > 0 ? static_cast<double>(late) / static_cast<double>(packets) : 0.0;
  t.jitter = m.flows.empty()
                 ? 0.0
                 : std::min(1.0, jitter / static_cast<double>(m.flows.size()) / static_cast<double>(biDuration));
  t.fairness = jainIndex(perFlow);
  t.drops = arrived > 0.0 ? std::min(1.0, dropped / arrived) : 0.0;
  return t;
}

// ---------------------------------------------------------------------------
// Actions

namespace detail {

inline std::uint64_t actionUint(const nlohmann::json& j, const char* key, const std::string& path) {
  auto it = j.find(key);
  if (it == j.end()) throw MalformedAction(path + "." + key + ": missing");
  if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0))
    throw MalformedAction(path + "." + key + ": expected a non-negative integer");
  return it->get<std::uint64_t>();
}

inline const nlohmann::json& actionList(const nlohmann::json& a, const char* key) {
  static const nlohmann::json empty = nlohmann::json::array();
  auto it = a.find(key);
  if (it == a.end() || it->is_null()) return empty;
  if (!it->is_array()) throw MalformedAction(std::string(key) + ": expected an array");
  return *it;
}

}  // namespace detail

/// Decodes an action document. Unknown keys are ignored; id existence is
/// checked when the decisions are applied.
inline Decisions parseAction(const nlohmann::json& a) {
  using detail::actionList;
  using detail::actionUint;
  if (a.is_null()) return {};
  if (!a.is_object()) throw MalformedAction("action: expected an object");
  Decisions d;

  const auto& verdicts = actionList(a, "admissionVerdicts");
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    const auto& v = verdicts[i];
    const std::string path = "admissionVerdicts[" + std::to_string(i) + "]";
    if (!v.is_object()) throw MalformedAction(path + ": expected an object");
    const auto rid = actionUint(v, "requestId", path);
    auto it = v.find("verdict");
    if (it == v.end() || !it->is_string()) throw MalformedAction(path + ".verdict: missing");
    const auto s = it->get<std::string>();
    Decisions::VerdictOverride o;
    if (s == "ACCEPT") {
      o.verdict = Verdict::Accept;
    } else if (s == "REJECT") {
      o.verdict = Verdict::Reject;
    } else if (s == "SUGGEST") {
      o.verdict = Verdict::Suggest;
      auto sc = v.find("scale");
      if (sc == v.end() || !sc->is_number() || !std::isfinite(sc->get<double>()))
        throw MalformedAction(path + ".scale: expected a number");
      o.scale = sc->get<double>();
    } else {
      throw MalformedAction(path + ".verdict: unknown value " + s);
    }
    if (!d.verdicts.emplace(rid, o).second) throw MalformedAction(path + ": duplicate requestId");
  }

  const auto& durations = actionList(a, "durationAdjust");
  for (std::size_t i = 0; i < durations.size(); ++i) {
    const std::string path = "durationAdjust[" + std::to_string(i) + "]";
    if (!durations[i].is_object()) throw MalformedAction(path + ": expected an object");
    const auto flow = static_cast<FlowId>(actionUint(durations[i], "flowId", path));
    d.spDurations[flow] = static_cast<Micros>(actionUint(durations[i], "duration", path));
  }

  const auto& toggles = actionList(a, "spatialGroupToggle");
  for (std::size_t i = 0; i < toggles.size(); ++i) {
    const std::string path = "spatialGroupToggle[" + std::to_string(i) + "]";
    const auto& t = toggles[i];
    if (!t.is_object()) throw MalformedAction(path + ": expected an object");
    Decisions::PairToggle p;
    p.a = static_cast<FlowId>(actionUint(t, "flowA", path));
    p.b = static_cast<FlowId>(actionUint(t, "flowB", path));
    auto it = t.find("allow");
    if (it == t.end() || !it->is_boolean()) throw MalformedAction(path + ".allow: expected a boolean");
    p.allow = it->get<bool>();
    if (p.a == p.b) throw MalformedAction(path + ": a flow cannot pair with itself");
    d.spatialToggles.push_back(p);
  }

  const auto& updates = actionList(a, "tspecUpdates");
  for (std::size_t i = 0; i < updates.size(); ++i) {
    const std::string path = "tspecUpdates[" + std::to_string(i) + "]";
    const auto& u = updates[i];
    if (!u.is_object()) throw MalformedAction(path + ": expected an object");
    const auto flow = static_cast<FlowId>(actionUint(u, "flowId", path));
    d.tspecUpdates[flow] = {static_cast<Micros>(actionUint(u, "allocationPeriod", path)),
                            static_cast<Micros>(actionUint(u, "minDuration", path))};
  }

  if (auto it = a.find("mcsMargin"); it != a.end() && !it->is_null()) {
    if (!it->is_number()) throw MalformedAction("mcsMargin: expected a number");
    d.mcsMargin = it->get<double>();
  }
  return d;
}

// ---------------------------------------------------------------------------
// Environment

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  nlohmann::json info;
};

/// Episodic environment stepped once per beacon interval.
class Environment {
public:
  explicit Environment(Scenario base, RewardWeights weights = {})
      : base_(std::move(base)), weights_(weights) {}

  const Scenario& scenario() const { return base_; }
  const RewardWeights& weights() const { return weights_; }
  void setWeights(const RewardWeights& w) { weights_ = w; }
  bool active() const { return sim_ && !sim_->finished(); }
  const Simulator* simulator() const { return sim_.get(); }

  Observation reset(std::optional<std::uint64_t> seed = std::nullopt) {
    Scenario sc = base_;
    if (seed) sc.seed = *seed;
    sim_ = std::make_unique<Simulator>(std::move(sc));
    ewma_.assign(sim_->flowIds().size(), 0.0);
    return observe(nullptr);
  }

  /// Replaces the scenario for subsequent resets.
  void setScenario(Scenario sc) { base_ = std::move(sc); }

  StepResult step(const Decisions& action) {
    if (!sim_) throw ProtocolError("step before reset");
    if (sim_->finished()) throw ProtocolError("step after episode end");
    const DecisionReport rep = sim_->applyDecisions(action);
    const BiMetrics& m = sim_->runNextBi();
    const double seconds = static_cast<double>(base_.bi.biDuration) / kMicrosPerSecond;
    for (std::size_t i = 0; i < m.flows.size(); ++i)
      ewma_[i] = kEwmaAlpha * static_cast<double>(m.flows[i].arrivedBits) / seconds +
                 (1.0 - kEwmaAlpha) * ewma_[i];

    StepResult r;
    r.observation = observe(&m);
    const RewardTerms terms = rewardTerms(m, base_.bi.biDuration, sim_->world().mcsTable.highest().phyRate);
    r.reward = terms.weighted(weights_);
    r.done = sim_->finished();
    r.info["notes"] = rep.notes;
    r.info["admission"] = nlohmann::json::array();
    for (const auto& resp : rep.responses) {
      nlohmann::json a = {{"requestId", resp.requestId}, {"verdict", toString(resp.verdict)}};
      if (resp.suggestedTspec) a["suggestedMinDuration"] = resp.suggestedTspec->minDuration;
      r.info["admission"].push_back(a);
    }
    r.info["metrics"] = m.toJson();
    r.info["rewardTerms"] = {{"throughput", terms.throughput},
                             {"delayViolation", terms.delayViolation},
                             {"jitter", terms.jitter},
                             {"fairness", terms.fairness},
                             {"drops", terms.drops}};
    return r;
  }

  StepResult step(const nlohmann::json& action) { return step(parseAction(action)); }

  static constexpr double kEwmaAlpha = 0.3;

private:
  Observation observe(const BiMetrics* last) const {
    Observation o;
    o.biIndex = sim_->biIndex();
    o.dtiUtilization = last ? last->utilization : 0.0;
    const auto ids = sim_->flowIds();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      FlowObservation f;
      f.flowId = ids[i];
      f.queuedBits = static_cast<double>(sim_->queue(ids[i]).queuedBits());
      f.arrivalRateEwma = ewma_[i];
      const auto& link = sim_->link(ids[i]);
      f.currentMcsIndex = link.mcs ? static_cast<double>(*link.mcs) : -1.0;
      if (last) {
        f.p95DelayLastBi = last->flows[i].p95Delay;
        f.dropCountLastBi = static_cast<double>(last->flows[i].droppedPackets);
        f.allocatedTimeLastBi = static_cast<double>(last->flows[i].allocatedTime);
      }
      o.flows.push_back(f);
    }
    for (const auto& r : sim_->pendingRequests())
      o.pending.push_back({r.requestId, r.tspec.flowId, r.tspec.allocationPeriod, r.tspec.minDuration,
                           r.tspec.maxDuration, r.timestamp});
    return o;
  }

  Scenario base_;
  RewardWeights weights_;
  std::unique_ptr<Simulator> sim_;
  std::vector<double> ewma_;
};

}  // namespace dmgsim
