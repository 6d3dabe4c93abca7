#include <gtest/gtest.h>

#include "dmgsim/engine.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace dmgsim;
using nlohmann::json;

namespace {

json minimal() {
  return json::parse(R"({
    "stations": [{"aid": 1, "role": "PCP_AP"}, {"aid": 2, "x": 5}],
    "flows": [{"flowId": 1, "src": 1, "dst": 2, "kind": "CBR", "meanRate": 1e8, "packetSize": 1500}]
  })");
}

}  // namespace

TEST(LoadScenario, MinimalGetsDefaults) {
  const Scenario sc = loadScenario(minimal());
  EXPECT_EQ(sc.bi.biDuration, 100000);
  EXPECT_EQ(sc.bi.bhiDuration, 2000);
  EXPECT_EQ(sc.mac, MacParams{});
  EXPECT_EQ(sc.mcsTable, McsTable::defaults());
  EXPECT_EQ(sc.mcsMargin, 2.0);
  EXPECT_EQ(sc.channel.pathLossExponent, 2.5);
  EXPECT_EQ(sc.simDuration, 1000000);
  EXPECT_EQ(sc.flows[0].queueCapacity, 2000000);
  ASSERT_EQ(sc.stations.size(), 2u);
  EXPECT_EQ(sc.stations[0].role, StationRole::PcpAp);
}

TEST(LoadScenario, UnknownKindIsSchemaError) {
  json d = minimal();
  d["flows"][0]["kind"] = "FTP";
  try {
    loadScenario(d);
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("flows[0].kind"), std::string::npos);
  }
}

TEST(LoadScenario, UnknownKeyNamed) {
  json d = minimal();
  d["mac"] = {{"cwMn", 3}};
  try {
    loadScenario(d);
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("cwMn"), std::string::npos);
  }
}

TEST(LoadScenario, UnknownAidIsReferenceError) {
  json d = minimal();
  d["flows"][0]["dst"] = 9;
  EXPECT_THROW(loadScenario(d), ReferenceError);
  d = minimal();
  d["blockages"] = json::array({{{"src", 1}, {"dst", 7}, {"start", 0}, {"end", 5}, {"attenuation", 3}}});
  EXPECT_THROW(loadScenario(d), ReferenceError);
  d = minimal();
  d["tspecs"] = json::array({{{"flowId", 4}, {"allocationPeriod", 1000}, {"minDuration", 10}}});
  EXPECT_THROW(loadScenario(d), ReferenceError);
}

TEST(LoadScenario, InvalidValues) {
  json d = minimal();
  d["sim"] = {{"duration", 150000}};
  EXPECT_THROW(loadScenario(d), SchemaError);
  d = minimal();
  d["flows"][0]["meanRate"] = 0;
  EXPECT_THROW(loadScenario(d), SchemaError);
  d = minimal();
  d["stations"][1]["x"] = 0;
  EXPECT_THROW(loadScenario(d), SchemaError);
  d = minimal();
  d["tspecs"] = json::array({{{"flowId", 1}, {"allocationPeriod", 1000}, {"minDuration", 2000}}});
  EXPECT_THROW(loadScenario(d), SchemaError);
  d = minimal();
  d["stations"] = json::array();
  EXPECT_THROW(loadScenario(d), SchemaError);
  d = minimal();
  d["stations"][1]["role"] = "PCP_AP";
  EXPECT_THROW(loadScenario(d), SchemaError);
  d = minimal();
  d["bi"] = {{"biDuration", "long"}};
  EXPECT_THROW(loadScenario(d), SchemaError);
  EXPECT_THROW(loadScenarioText("{ not json"), SchemaError);
  EXPECT_THROW(loadScenarioFile("/nonexistent/scenario.json"), SchemaError);
}

TEST(LoadScenario, EchoRoundTrips) {
  gen::Gen g(1);
  for (int i = 0; i < 200; ++i) {
    const Scenario sc = loadScenario(g.scenario());
    const json echo = scenarioToJson(sc);
    const Scenario again = loadScenario(echo);
    EXPECT_EQ(again, sc);
    EXPECT_EQ(scenarioToJson(again), echo);
  }
}

TEST(LoadScenario, ShippedScenariosValidate) {
  for (const char* name : {"default", "vr_latency", "cbap_fairness", "spatial_sharing"})
    EXPECT_NO_THROW(loadScenarioFile(std::string(DMGSIM_SCENARIO_DIR) + "/" + name + ".json")) << name;
}

TEST(Jain, Values) {
  EXPECT_DOUBLE_EQ(jainIndex({5.0, 0.0}), 0.5);
  EXPECT_DOUBLE_EQ(jainIndex({3.0, 3.0, 3.0}), 1.0);
  EXPECT_DOUBLE_EQ(jainIndex({}), 1.0);
  gen::Gen g(2);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> x(static_cast<std::size_t>(g.integer(1, 8)));
    for (auto& v : x) v = g.real(0, 1e9);
    const double j = jainIndex(x);
    EXPECT_NEAR(j, oracle::jain(x), 1e-12);
    EXPECT_GE(j, 1.0 / x.size() - 1e-12);
    EXPECT_LE(j, 1.0 + 1e-12);
  }
}

TEST(Metrics, ThroughputFromDeliveredBits) {
  FlowMetrics f;
  f.flowId = 1;
  f.deliveredBits = 100'000'000;
  const auto r = makeReport(1'000'000, 980'000, 0, {f}, {{}}, {});
  EXPECT_DOUBLE_EQ(r.flows[0].throughput, 1e8);
  EXPECT_EQ(r.network.jainIndex, 1.0);
}

TEST(Metrics, DelaySummary) {
  const auto s = summarizeDelays({10, 20, 30, 40});
  EXPECT_DOUBLE_EQ(s.mean, 25.0);
  EXPECT_DOUBLE_EQ(s.jitter, std::sqrt(125.0));
  std::vector<Micros> hundred(100);
  for (int i = 0; i < 100; ++i) hundred[i] = i + 1;
  const auto h = summarizeDelays(hundred);
  EXPECT_DOUBLE_EQ(h.p95, 95.0);
  EXPECT_DOUBLE_EQ(h.p99, 99.0);
  EXPECT_EQ(summarizeDelays({}).mean, 0.0);
}

// The report rebuilt from the full trace equals the one the engine keeps.
TEST(Metrics, CollectFromTraceMatchesEngine) {
  gen::Gen g(12);
  for (int i = 0; i < 60; ++i) {
    const Scenario sc = loadScenario(g.scenario());
    TraceOptions opt;
    opt.keep = true;
    const RunResult r = run(sc, opt);
    const MetricsReport again = collectMetrics(r.trace, sc);
    ASSERT_EQ(again.flows.size(), r.report.flows.size());
    for (std::size_t k = 0; k < again.flows.size(); ++k) {
      EXPECT_EQ(again.flows[k].deliveredBits, r.report.flows[k].deliveredBits);
      EXPECT_EQ(again.flows[k].generatedBits, r.report.flows[k].generatedBits);
      EXPECT_EQ(again.flows[k].droppedBits, r.report.flows[k].droppedBits);
      EXPECT_EQ(again.flows[k].packetsDelivered, r.report.flows[k].packetsDelivered);
      EXPECT_DOUBLE_EQ(again.flows[k].delayP95, r.report.flows[k].delayP95);
      EXPECT_NEAR(again.flows[k].delayMean, r.report.flows[k].delayMean, 1e-6);
    }
    EXPECT_EQ(again.network.admissionAccepted, r.report.network.admissionAccepted);
    EXPECT_NEAR(again.network.utilization, r.report.network.utilization, 1e-12);
  }
}

TEST(Trace, RecordJsonRoundTrip) {
  TraceRecord r{1234, TraceType::Tx, 3, 12000, 8, "SUCCESS", 8};
  EXPECT_EQ(traceRecordFromJson(toJson(r)), r);
  TraceRecord e{0, TraceType::Ese, std::nullopt, 0, std::nullopt, "CBAP"};
  e.ese = EseRecord{kCbapIdBase, AllocKind::Cbap, std::nullopt, std::nullopt, 2000, 98000};
  EXPECT_EQ(traceRecordFromJson(json::parse(toJson(e).dump())), e);
  EXPECT_THROW(traceRecordFromJson({{"time", 0}, {"type", "NOPE"}}), SchemaError);
}

TEST(Trace, SamplingKeepsControlLines) {
  std::ostringstream out;
  TraceOptions opt;
  opt.out = &out;
  opt.sampling = 10;
  TraceSink sink(opt);
  for (int i = 0; i < 100; ++i) sink.emit({i, TraceType::Arrival, 1, 8, std::nullopt, ""});
  sink.emit({100, TraceType::BiStart, std::nullopt, 0, std::nullopt, ""});
  const std::string s = out.str();
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 11);
  EXPECT_EQ(sink.count(), 101u);
}
