#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmgsim/common.hpp"
#include "dmgsim/scenario.hpp"
#include "dmgsim/trace.hpp"

namespace dmgsim {

/// Jain's index (sum x)^2 / (n sum x^2). All-zero or empty inputs count as
/// perfectly fair.
inline double jainIndex(const std::vector<double>& x) {
  double sum = 0.0, sq = 0.0;
  for (double v : x) {
    sum += v;
    sq += v * v;
  }
  if (x.empty() || sq == 0.0) return 1.0;
  return sum * sum / (static_cast<double>(x.size()) * sq);
}

struct DelaySummary {
  double mean = 0.0;
  double p95 = 0.0;
  double p99 = 0.0;
  double jitter = 0.0;  // population std. dev.
};

/// Nearest-rank percentile of sorted samples.
inline double percentileSorted(const std::vector<Micros>& sorted, double p) {
  if (sorted.empty()) return 0.0;
  auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(sorted.size())));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return static_cast<double>(sorted[rank - 1]);
}

inline DelaySummary summarizeDelays(std::vector<Micros> delays) {
  DelaySummary s;
  if (delays.empty()) return s;
  std::sort(delays.begin(), delays.end());
  const double n = static_cast<double>(delays.size());
  double sum = 0.0;
  for (Micros d : delays) sum += static_cast<double>(d);
  s.mean = sum / n;
  double var = 0.0;
  for (Micros d : delays) var += (static_cast<double>(d) - s.mean) * (static_cast<double>(d) - s.mean);
  s.jitter = std::sqrt(var / n);
  s.p95 = percentileSorted(delays, 0.95);
  s.p99 = percentileSorted(delays, 0.99);
  return s;
}

struct FlowMetrics {
  FlowId flowId = 0;
  double throughput = 0.0;  // bit/s
  std::int64_t deliveredBits = 0;
  std::int64_t generatedBits = 0;
  std::int64_t droppedBits = 0;
  std::int64_t packetsDelivered = 0;
  double delayMean = 0.0;
  double delayP95 = 0.0;
  double delayP99 = 0.0;
  double jitter = 0.0;
  double dropRatio = 0.0;
  bool operator==(const FlowMetrics&) const = default;
};

struct NetworkMetrics {
  double jainIndex = 1.0;
  double utilization = 0.0;
  int admissionAccepted = 0;
  int admissionRejected = 0;
  int admissionSuggested = 0;
  bool operator==(const NetworkMetrics&) const = default;
};

struct MetricsReport {
  Micros simDuration = 0;
  std::vector<FlowMetrics> flows;
  NetworkMetrics network;

  /// Flat key-value document.
  nlohmann::json toJson() const {
    nlohmann::json j = nlohmann::json::object();
    j["simDuration"] = simDuration;
    for (const auto& f : flows) {
      const std::string p = "flow." + std::to_string(f.flowId) + ".";
      j[p + "throughput"] = f.throughput;
      j[p + "deliveredBits"] = f.deliveredBits;
      j[p + "generatedBits"] = f.generatedBits;
      j[p + "droppedBits"] = f.droppedBits;
      j[p + "packetsDelivered"] = f.packetsDelivered;
      j[p + "delayMean"] = f.delayMean;
      j[p + "delayP95"] = f.delayP95;
      j[p + "delayP99"] = f.delayP99;
      j[p + "jitter"] = f.jitter;
      j[p + "dropRatio"] = f.dropRatio;
    }
    j["network.jainIndex"] = network.jainIndex;
    j["network.utilization"] = network.utilization;
    j["network.admissionAccepted"] = network.admissionAccepted;
    j["network.admissionRejected"] = network.admissionRejected;
    j["network.admissionSuggested"] = network.admissionSuggested;
    return j;
  }
  bool operator==(const MetricsReport&) const = default;
};

/// Assembles a report from per-flow accumulators.
inline MetricsReport makeReport(Micros simDuration, Micros dtiTotal, Micros busy,
                                const std::vector<FlowMetrics>& flowsIn,
                                const std::vector<std::vector<Micros>>& delays,
                                const NetworkMetrics& admission) {
  MetricsReport r;
  r.simDuration = simDuration;
  r.network = admission;
  std::vector<double> thr;
  for (std::size_t i = 0; i < flowsIn.size(); ++i) {
    FlowMetrics f = flowsIn[i];
    f.throughput = simDuration > 0 ? static_cast<double>(f.deliveredBits) * 1e6 /
                                         static_cast<double>(simDuration)
                                   : 0.0;
    const auto s = summarizeDelays(delays[i]);
    f.delayMean = s.mean;
    f.delayP95 = s.p95;
    f.delayP99 = s.p99;
    f.jitter = s.jitter;
    f.dropRatio = f.generatedBits > 0
                      ? static_cast<double>(f.droppedBits) / static_cast<double>(f.generatedBits)
                      : 0.0;
    thr.push_back(f.throughput);
    r.flows.push_back(f);
  }
  r.network.jainIndex = jainIndex(thr);
  r.network.utilization =
      dtiTotal > 0 ? static_cast<double>(busy) / static_cast<double>(dtiTotal) : 0.0;
  return r;
}

/// Recomputes the metrics report from a complete (unsampled) trace: delays
/// by FIFO matching of arrivals to deliveries, utilization from the union of
/// channel-occupying records.
inline MetricsReport collectMetrics(const std::vector<TraceRecord>& trace, const Scenario& sc) {
  std::vector<FlowId> ids;
  for (const auto& f : sc.flows) ids.push_back(f.flowId);
  std::sort(ids.begin(), ids.end());
  std::map<FlowId, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = i;

  std::vector<FlowMetrics> flows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) flows[i].flowId = ids[i];
  std::vector<std::vector<Micros>> delays(ids.size());
  std::vector<std::deque<Micros>> fifo(ids.size());
  NetworkMetrics adm;
  Micros busy = 0, busyUntil = 0;

  for (const auto& r : trace) {
    if (r.duration > 0) {
      const Micros b = std::max(r.time, busyUntil);
      const Micros e = r.time + r.duration;
      if (e > b) {
        busy += e - b;
        busyUntil = e;
      }
    }
    if (r.type == TraceType::AddtsResponse) {
      if (r.outcome == "ACCEPT") ++adm.admissionAccepted;
      if (r.outcome == "REJECT") ++adm.admissionRejected;
      if (r.outcome == "SUGGEST") ++adm.admissionSuggested;
      continue;
    }
    if (!r.flowId) continue;
    auto it = index.find(*r.flowId);
    if (it == index.end()) continue;
    const std::size_t i = it->second;
    switch (r.type) {
      case TraceType::Arrival:
        flows[i].generatedBits += r.bits;
        fifo[i].push_back(r.time);
        break;
      case TraceType::Drop:
        flows[i].droppedBits += r.bits;
        if (r.outcome == "TAIL")
          flows[i].generatedBits += r.bits;
        else if (!fifo[i].empty())
          fifo[i].pop_front();
        break;
      case TraceType::Tx:
        if (r.outcome == "SUCCESS" && !fifo[i].empty()) {
          flows[i].deliveredBits += r.bits;
          ++flows[i].packetsDelivered;
          delays[i].push_back(r.time + r.duration - fifo[i].front());
          fifo[i].pop_front();
        }
        break;
      default:
        break;
    }
  }
  const Micros sim = sc.simDuration;
  const Micros dti = static_cast<Micros>(sc.biCount()) * sc.bi.dtiDuration();
  return makeReport(sim, dti, busy, flows, delays, adm);
}

}  // namespace dmgsim
