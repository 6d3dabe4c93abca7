// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "dmgsim/env_server.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"
#include "support/raw_client.hpp"

using namespace dmgsim;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // Records the first failure only; later ones add noise.
  void fail(const std::string& why) {
    if (pass) detail << "first failure: " << why << "; ";
    pass = false;
  }
  void require(bool ok, const std::string& why) {
    if (!ok) fail(why);
  }
};

Scenario shipped(const std::string& name) {
  return loadScenarioFile(std::string(DMGSIM_SCENARIO_DIR) + "/" + name + ".json");
}

std::vector<TraceRecord> keepTrace(const Scenario& sc, RunResult* out = nullptr) {
  TraceOptions opt;
  opt.keep = true;
  RunResult r = run(sc, opt);
  auto t = r.trace;
  if (out) *out = std::move(r);
  return t;
}

double toDouble(std::int64_t v) { return static_cast<double>(v); }

// ---------------------------------------------------------------------------

void biStructure(Outcome& o) {
  const Scenario sc = shipped("default");
  Simulator sim(sc, TraceOptions{true});
  while (!sim.finished()) {
    sim.applyDecisions();
    sim.runNextBi();
    for (const auto& a : sim.lastSchedule().allocations)
      o.require(a.startOffset >= sc.bi.bhiDuration && a.end() <= sc.bi.biDuration,
                "default: allocation outside the DTI");
  }
  std::vector<Micros> starts;
  for (const auto& r : sim.trace().records())
    if (r.type == TraceType::BiStart) starts.push_back(r.time);
  o.require(starts.size() == 10, "default: expected 10 BIs");
  for (std::size_t k = 0; k < starts.size(); ++k)
    o.require(starts[k] == static_cast<Micros>(k) * 100000, "default: BI start off the 100000 us grid");

  gen::Gen g(2024);
  std::int64_t schedules = 0, violations = 0;
  for (int i = 0; i < 10000; ++i) {
    const Scenario s = loadScenario(g.scenario());
    Simulator sim2(s);
    while (!sim2.finished()) {
      sim2.applyDecisions();
      sim2.runNextBi();
      ++schedules;
      const auto v = validateSchedule(sim2.lastSchedule(), s.bi);
      if (!v.ok()) {
        ++violations;
        o.fail("random scenario " + std::to_string(i) + " produced an invalid schedule");
      }
    }
  }
  o.detail << "10000 scenarios, " << schedules << " schedules, " << violations << " violations";
}

void rateCeiling(Outcome& o) {
  // Per-transmission and per-BI ceilings on shipped and random scenarios.
  std::vector<Scenario> all;
  for (const char* n : {"default", "vr_latency", "spatial_sharing"}) all.push_back(shipped(n));
  gen::Gen g(77);
  for (int i = 0; i < 300; ++i) all.push_back(loadScenario(g.scenario()));
  double peak = 0;
  for (const auto& sc : all) {
    RunResult r;
    for (const auto& rec : keepTrace(sc, &r))
      if (rec.type == TraceType::Tx && rec.outcome == "SUCCESS") {
        o.require(rec.duration > 0, "zero-airtime transmission");
        peak = std::max(peak, toDouble(rec.bits) * 1e6 / toDouble(rec.duration));
      }
    const double cap = kMaxPhyRate * toDouble(sc.bi.biDuration) / 1e6;
    for (const auto& m : r.perBi)
      for (const auto& f : m.flows) o.require(toDouble(f.deliveredBits) <= cap, "BI throughput above ceiling");
    for (const auto& f : r.report.flows) o.require(f.throughput <= kMaxPhyRate, "flow throughput above ceiling");
  }
  o.require(peak <= kMaxPhyRate, "transmission rate above ceiling");

  // Saturated flow with one SP per BI, nothing else on the air.
  const json doc = json::parse(R"({
    "bi": {"defaultCbap": false},
    "stations": [{"aid": 1, "role": "PCP_AP"}, {"aid": 2, "x": 2}],
    "flows": [{"flowId": 1, "src": 2, "dst": 1, "kind": "CBR", "meanRate": 6e9, "packetSize": 7920,
               "queueCapacity": 100000000}],
    "tspecs": [{"flowId": 1, "allocationPeriod": 100000, "minDuration": 50000, "maxDuration": 50000}],
    "mac": {"truncation": false, "extension": false, "tspecAdaptation": false},
    "sim": {"duration": 1000000}
  })");
  const Scenario sc = loadScenario(doc);
  std::int64_t bits = 0;
  Micros spTime = 0, spStart = -1;
  const McsIndex top = sc.mcsTable.highest().index;
  for (const auto& rec : keepTrace(sc)) {
    if (rec.type == TraceType::SpStart) spStart = rec.time;
    if (rec.type == TraceType::SpEnd) {
      spTime += rec.time - spStart;
      spStart = -1;
    }
    if (rec.type == TraceType::Tx && rec.outcome == "SUCCESS" && spStart >= 0) {
      bits += rec.bits;
      o.require(rec.mcs == top, "saturated link not at top MCS");
    }
  }
  const double payloadUs = 63360.0 / kMaxPhyRate * 1e6;
  const double efficiency = payloadUs / (payloadUs + toDouble(sc.mac.perPacketOverhead));
  const double predicted = kMaxPhyRate * efficiency * toDouble(spTime) / 1e6;
  const double ratio = toDouble(bits) / predicted;
  o.require(spTime > 0, "no SP time");
  o.require(ratio >= 0.90 && ratio <= 1.02, "saturated SP outside [0.90, 1.02] of the prediction");
  o.detail << "peak per-TX rate " << peak / 1e9 << " Gb/s over " << all.size()
           << " scenarios; saturated SP achieves " << ratio << " of prediction";
}

void qosLatency(Outcome& o) {
  Scenario sc = shipped("vr_latency");
  {
    Simulator probe(sc);
    const auto& t = sc.tspecs.at(0).tspec;
    const auto mcs = probe.link(1).mcs;
    o.require(mcs.has_value(), "VR link in outage");
    const double rate = mcs ? sc.mcsTable.rate(*mcs) : 1.0;
    const double pktUs = toDouble(sc.flows[0].packetBits()) / rate * 1e6;
    const double capacity =
        rate * pktUs / (pktUs + toDouble(sc.mac.perPacketOverhead)) * toDouble(t.minDuration) / toDouble(t.allocationPeriod);
    o.require(sc.flows[0].meanRate <= 0.7 * capacity, "offered load above 70% of SP capacity");
    o.detail << "load " << sc.flows[0].meanRate / capacity * 100 << "% of SP capacity; ";
  }
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    sc.seed = seed;
    const RunResult r = run(sc);
    const auto& f = r.report.flows.at(0);
    o.require(f.packetsDelivered > 0, "nothing delivered");
    worst = std::max(worst, f.delayP99);
    o.require(f.delayP99 < 20000, "p99 delay >= 20000 us at seed " + std::to_string(seed));
  }
  o.detail << "worst p99 over 20 seeds " << worst << " us";
}

void conservation(Outcome& o) {
  gen::Gen g(555);
  std::int64_t checks = 0;
  std::set<TraceType> seen;
  for (int i = 0; i < 1000; ++i) {
    const Scenario sc = loadScenario(g.scenario());
    Simulator sim(sc, TraceOptions{true});
    std::map<FlowId, std::int64_t> in, out, dropped;
    std::size_t cursor = 0;
    while (!sim.finished()) {
      sim.applyDecisions();
      const BiMetrics& m = sim.runNextBi();
      const Micros biEnd = static_cast<Micros>(m.biIndex + 1) * sc.bi.biDuration;
      const auto& recs = sim.trace().records();
      for (; cursor < recs.size() && recs[cursor].time < biEnd; ++cursor) {
        const auto& r = recs[cursor];
        seen.insert(r.type);
        if (!r.flowId) continue;
        if (r.type == TraceType::Arrival) in[*r.flowId] += r.bits;
        if (r.type == TraceType::Drop) {
          dropped[*r.flowId] += r.bits;
          if (r.outcome == "TAIL") in[*r.flowId] += r.bits;
        }
        if (r.type == TraceType::Tx && r.outcome == "SUCCESS") out[*r.flowId] += r.bits;
      }
      for (const auto& f : m.flows) {
        ++checks;
        const std::string at = "scenario " + std::to_string(i) + " BI " + std::to_string(m.biIndex) + " flow " +
                               std::to_string(f.flowId);
        o.require(f.inBits == f.outBits + f.totalDroppedBits + f.queuedBits, at + ": counters do not balance");
        o.require(f.queuedBits >= 0, at + ": negative backlog");
        o.require(in[f.flowId] == f.inBits && out[f.flowId] == f.outBits && dropped[f.flowId] == f.totalDroppedBits,
                  at + ": trace totals disagree with counters");
      }
    }
  }
  for (TraceType t : {TraceType::BlockageOn, TraceType::Truncate, TraceType::Extend, TraceType::Drop})
    o.require(seen.count(t) > 0, std::string("suite never exercised ") + toString(t));
  o.detail << "1000 scenarios, " << checks << " flow/BI balances";
}

void determinism(Outcome& o) {
  const Scenario sc = shipped("default");
  const RunResult first = run(sc);
  const std::string report = first.report.toJson().dump();
  for (int i = 1; i < 100; ++i) {
    const RunResult r = run(sc);
    o.require(r.traceHash == first.traceHash && r.traceRecords == first.traceRecords, "trace hash differs");
    o.require(r.report.toJson().dump() == report, "report differs");
  }
  gen::Gen g(9);
  for (int i = 0; i < 50; ++i) {
    const Scenario s = loadScenario(g.scenario());
    const RunResult a = run(s), b = run(s);
    o.require(a.traceHash == b.traceHash && a.report.toJson().dump() == b.report.toJson().dump(),
              "random scenario not reproducible");
  }
  o.detail << "100 runs of default, hash " << std::hex << first.traceHash << std::dec
           << "; 50 random scenarios run twice";
}

oracle::Node node(const Station& s) {
  oracle::Node n{s.position.x, s.position.y};
  n.n = s.nSectors;
  n.boresight = s.boresight;
  n.txDbm = s.txPower;
  n.nfDb = s.noiseFigure;
  n.main = s.pattern.mainLobeGain;
  n.side = s.pattern.sideLobeGain;
  return n;
}

void spatialGain(Outcome& o) {
  Scenario sc = shipped("spatial_sharing");
  const RunResult on = run(sc);
  sc.mac.spatialSharing = false;
  const RunResult off = run(sc);
  std::int64_t a = 0, b = 0;
  for (const auto& f : on.report.flows) a += f.deliveredBits;
  for (const auto& f : off.report.flows) b += f.deliveredBits;
  o.require(a > b, "grouping did not increase aggregate bits");
  for (const auto* r : {&on, &off}) {
    o.require(r->report.network.utilization <= 1.0, "report utilization above 1");
    for (const auto& m : r->perBi) o.require(m.utilization <= 1.0, "BI utilization above 1");
  }

  gen::Gen g(404);
  int groups = 0, pairs = 0;
  for (int iter = 0; iter < 2000; ++iter) {
    World w;
    const int nLinks = static_cast<int>(g.integer(2, 3));
    for (Aid i = 1; i <= 2 * nLinks; ++i) {
      Station s;
      s.aid = i;
      s.position = {g.real(-60, 60), g.real(-60, 60)};
      s.boresight = g.real(0, 6.28);
      w.stations[i] = s;
    }
    bool close = false;
    for (auto& [x, sx] : w.stations)
      for (auto& [y, sy] : w.stations)
        if (x < y && distance(sx.position, sy.position) < 1.0) close = true;
    if (close) continue;
    std::vector<Allocation> in;
    Micros t = 2000;
    const int nSps = static_cast<int>(g.integer(2, 6));
    for (int k = 0; k < nSps; ++k) {
      const int l = k % nLinks;
      Allocation sp;
      sp.allocId = static_cast<AllocId>(k + 1);
      sp.srcAid = static_cast<Aid>(2 * l + 1);
      sp.dstAid = static_cast<Aid>(2 * l + 2);
      sp.flowId = static_cast<FlowId>(l + 1);
      sp.startOffset = t;
      sp.duration = g.integer(1000, 10000);
      t += sp.duration + 1;
      in.push_back(sp);
    }
    GroupingOptions opt;
    opt.marginDb = g.real(0, 6);
    const auto r = formSpatialGroups(in, w, opt);
    std::map<std::uint32_t, std::vector<Allocation>> byGroup;
    for (const auto& x : r.allocations)
      if (x.spatialGroup) byGroup[*x.spatialGroup].push_back(x);
    for (const auto& [gid, members] : byGroup) {
      ++groups;
      for (const auto& x : members)
        for (const auto& y : members) {
          if (x.allocId == y.allocId) continue;
          ++pairs;
          const auto tx = node(w.station(*x.srcAid)), rx = node(w.station(*x.dstAid));
          const auto itx = node(w.station(*y.srcAid));
          const auto& idst = w.station(*y.dstAid).position;
          const int itxSector = oracle::sector(itx.x, itx.y, itx.boresight, itx.n, idst.x, idst.y);
          const int mcs = oracle::defaultMcs(oracle::sinrDb(tx, rx, {}), w.mcsMargin);
          const double s = oracle::sinrDb(tx, rx, {{itx, itxSector}});
          o.require(mcs > 0 && s >= oracle::defaultThreshold(mcs) + opt.marginDb,
                    "group member fails the pairwise SINR check");
        }
    }
    o.require(validateSchedule(Schedule{0, r.allocations}, BiConfig{}).ok(), "grouped schedule invalid");
  }
  o.require(groups > 0, "no random instance formed a group");
  o.detail << "grouped " << a << " bits vs serialized " << b << "; " << groups << " random groups, " << pairs
           << " ordered pairs checked";
}

void cbapFairness(Outcome& o) {
  Scenario sc = shipped("cbap_fairness");
  o.require(sc.simDuration >= 10'000'000, "scenario shorter than 10 s");
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    sc.seed = seed;
    const RunResult r = run(sc);
    const double t1 = r.report.flows.at(0).throughput, t2 = r.report.flows.at(1).throughput;
    o.require(t1 > 0 && t2 > 0, "a contender got nothing");
    const double gap = std::abs(t1 - t2) / std::max(t1, t2);
    worst = std::max(worst, gap);
    o.require(gap <= 0.10, "throughput gap above 10% at seed " + std::to_string(seed));
  }
  o.detail << "worst relative gap over 20 seeds " << worst;
}

void admissionOracle(Outcome& o) {
  BiConfig c;
  c.biDuration = 400;
  c.bhiDuration = 20;
  c.guardTime = 1;
  struct Shape {
    Micros period, dur;
  };
  std::vector<Shape> shapes;
  for (Micros period : {50, 100, 200, 400})
    for (Micros dur : {5, 12, 25, 40, 90, 150})
      if (dur <= period) shapes.push_back({period, dur});

  auto tspecOf = [](FlowId f, const Shape& s) {
    TSpec t;
    t.flowId = f;
    t.srcAid = 1;
    t.dstAid = 2;
    t.allocationPeriod = s.period;
    t.minDuration = s.dur;
    t.maxDuration = s.dur;
    return t;
  };

  std::int64_t instances = 0, accepts = 0;
  const std::size_t n = shapes.size();
  // Existing flow sets are multisets of up to three shapes; the request is a fourth.
  std::function<void(std::vector<std::size_t>&, std::size_t)> walk = [&](std::vector<std::size_t>& chosen,
                                                                         std::size_t from) {
    Schedule s;
    std::vector<oracle::Busy> busy;
    AllocId next = 1;
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      const TSpec t = tspecOf(static_cast<FlowId>(k + 2), shapes[chosen[k]]);
      try {
        for (auto& a : placePeriodicAllocation(s, t, c, {0, next})) {
          busy.push_back({a.startOffset, a.end()});
          s.allocations.push_back(a);
          ++next;
        }
      } catch (const CapacityError&) {
      }
    }
    for (const auto& req : shapes) {
      ++instances;
      const TSpec t = tspecOf(1, req);
      const auto want = oracle::placeExhaustive(busy, c.biDuration, c.bhiDuration, c.guardTime, req.period, req.dur);
      const bool got = admissionCheck(t, s, c);
      accepts += got;
      if (got != want.has_value()) {
        o.fail("verdict mismatch");
        continue;
      }
      if (got) {
        std::vector<Micros> starts;
        for (const auto& a : placePeriodicAllocation(s, t, c)) starts.push_back(a.startOffset);
        o.require(starts == *want, "placement differs from exhaustive earliest fit");
      }
    }
    if (chosen.size() == 3) return;
    for (std::size_t i = from; i < n; ++i) {
      chosen.push_back(i);
      walk(chosen, i);
      chosen.pop_back();
    }
  };
  std::vector<std::size_t> chosen;
  walk(chosen, 0);
  o.detail << instances << " instances (" << accepts << " admissible), up to 4 flows and 8 windows";
}

void envEquivalence(Outcome& o) {
  std::vector<Scenario> scenarios;
  for (const char* name : {"default", "vr_latency", "cbap_fairness", "spatial_sharing"}) {
    Scenario sc = shipped(name);
    sc.simDuration = std::min<Micros>(sc.simDuration, 1'000'000);
    scenarios.push_back(sc);
  }
  gen::Gen g(31337);
  gen::Knobs k;
  k.maxBis = 6;
  while (scenarios.size() < 10) scenarios.push_back(loadScenario(g.scenario(k)));

  EnvServer server(scenarios[0], "tcp:127.0.0.1:0");
  server.start();
  auto client = rawclient::Client::tcp(server.endpoint().port);
  o.require(client.request("HELLO", json::object())["type"] == "HELLO", "no HELLO reply");
  std::size_t bis = 0;
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const Scenario& sc = scenarios[i];
    const RunResult batch = run(sc);
    json r = client.request("RESET", {{"seed", sc.seed}, {"scenario", scenarioToJson(sc)}});
    o.require(r["type"] == "OBS", "scenario " + std::to_string(i) + ": RESET failed");
    std::size_t k = 0;
    while (r["type"] == "OBS" && !r["payload"]["done"].get<bool>()) {
      r = client.request("STEP", {{"action", nullptr}});
      if (r["type"] != "OBS" && r["type"] != "DONE") {
        o.fail("scenario " + std::to_string(i) + ": " + r.dump());
        break;
      }
      if (k >= batch.perBi.size()) {
        o.fail("scenario " + std::to_string(i) + ": episode longer than batch run");
        break;
      }
      o.require(r["payload"]["info"]["metrics"].dump() == batch.perBi[k].toJson().dump(),
                "scenario " + std::to_string(i) + " BI " + std::to_string(k) + ": metrics differ");
      ++k;
    }
    o.require(k == batch.perBi.size(), "scenario " + std::to_string(i) + ": episode length differs");
    bis += k;
  }
  server.stop();
  o.detail << scenarios.size() << " scenarios, " << bis << " BIs compared over a raw TCP socket";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, void (*)(Outcome&)>> criteria = {
      {"bi-structure", biStructure},
      {"rate-ceiling", rateCeiling},
      {"qos-latency", qosLatency},
      {"conservation", conservation},
      {"determinism", determinism},
      {"spatial-sharing-gain", spatialGain},
      {"cbap-fairness", cbapFairness},
      {"admission-oracle", admissionOracle},
      {"env-engine-equivalence", envEquivalence},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      fn(o);
    } catch (const std::exception& e) {
      o.fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), secs, o.detail.str().c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
