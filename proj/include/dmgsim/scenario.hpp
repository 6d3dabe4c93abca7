#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmgsim/bi_scheduler.hpp"
#include "dmgsim/mac_protocol.hpp"
#include "dmgsim/radio_link.hpp"
#include "dmgsim/traffic.hpp"

namespace dmgsim {

/// A TSPEC the scenario submits as an ADDTS request at requestTime.
struct TspecRequest {
  TSpec tspec;
  Micros requestTime = 0;
  bool operator==(const TspecRequest&) const = default;
};

struct Scenario {
  BiConfig bi;
  std::vector<Station> stations;
  std::vector<TrafficSource> flows;
  std::vector<TspecRequest> tspecs;
  McsTable mcsTable = McsTable::defaults();
  MacParams mac;
  double mcsMargin = 2.0;
  std::vector<BlockageEvent> blockages;
  ChannelParams channel;
  Micros simDuration = 1'000'000;
  std::uint64_t seed = 1;
  int traceSampling = 1;

  std::uint64_t biCount() const { return static_cast<std::uint64_t>(simDuration / bi.biDuration); }

  World world() const {
    World w;
    for (const auto& s : stations) w.stations.emplace(s.aid, s);
    w.channel = channel;
    w.mcsTable = mcsTable;
    w.mcsMargin = mcsMargin;
    return w;
  }

  const TrafficSource* flow(FlowId id) const {
    for (const auto& f : flows)
      if (f.flowId == id) return &f;
    return nullptr;
  }

  bool operator==(const Scenario&) const = default;
};

namespace detail {

using nlohmann::json;

/// Reads keys from one JSON object, rejecting unknown keys and reporting the
/// full path of anything malformed.
class Section {
public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw SchemaError(path_ + ": expected an object");
  }

  template <typename T>
  T get(const char* key, T fallback) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return fallback;
    return convert<T>(*it, key);
  }

  template <typename T>
  T require(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) throw SchemaError(path(key) + ": missing required key");
    return convert<T>(*it, key);
  }

  template <typename T>
  std::optional<T> optional(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return std::nullopt;
    return convert<T>(*it, key);
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw SchemaError(path(it.key().c_str()) + ": unknown key");
  }

  std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
  template <typename T>
  T convert(const json& v, const char* key) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw SchemaError(path(key) + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() && !(v.is_number_float() && v.get<double>() == std::floor(v.get<double>())))
        throw SchemaError(path(key) + ": expected an integer");
      if (v.is_number_float()) return static_cast<T>(v.get<double>());
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
          throw SchemaError(path(key) + ": expected a non-negative integer");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw SchemaError(path(key) + ": expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw SchemaError(path(key) + ": expected a string");
    }
    return v.get<T>();
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::string indexed(const std::string& base, std::size_t i) {
  return base + "[" + std::to_string(i) + "]";
}

inline const json& arrayAt(const json& root, const char* key) {
  static const json empty = json::array();
  auto it = root.find(key);
  if (it == root.end() || it->is_null()) return empty;
  if (!it->is_array()) throw SchemaError(std::string(key) + ": expected an array");
  return *it;
}

}  // namespace detail

/// Parses and validates a scenario document, filling every default.
inline Scenario loadScenario(const nlohmann::json& doc) {
  using detail::Section;
  using nlohmann::json;
  Scenario sc;
  Section root(doc, "");
  for (const char* k : {"bi", "stations", "flows", "tspecs", "mcsTable", "mac", "blockages", "sim"})
    root.raw(k);
  root.finish();

  {
    static const json empty = json::object();
    auto it = doc.find("bi");
    Section s(it == doc.end() || it->is_null() ? empty : *it, "bi");
    const BiConfig d;
    sc.bi.biDuration = s.get<Micros>("biDuration", d.biDuration);
    sc.bi.bhiDuration = s.get<Micros>("bhiDuration", d.bhiDuration);
    sc.bi.guardTime = s.get<Micros>("guardTime", d.guardTime);
    sc.bi.defaultCbap = s.get<bool>("defaultCbap", d.defaultCbap);
    s.finish();
    validateBiConfig(sc.bi);
  }

  const auto& stations = detail::arrayAt(doc, "stations");
  if (stations.empty()) throw SchemaError("stations: at least one station is required");
  int coordinators = 0;
  for (std::size_t i = 0; i < stations.size(); ++i) {
    const std::string p = detail::indexed("stations", i);
    Section s(stations[i], p);
    Station st;
    st.aid = s.require<Aid>("aid");
    const auto role = s.get<std::string>("role", "STA");
    if (role == "PCP_AP") {
      st.role = StationRole::PcpAp;
      if (++coordinators > 1) throw SchemaError(p + ".role: only one PCP_AP is allowed");
    }
    else if (role == "STA")
      st.role = StationRole::Sta;
    else
      throw SchemaError(p + ".role: unknown role '" + role + "'");
    st.position.x = s.get<double>("x", 0.0);
    st.position.y = s.get<double>("y", 0.0);
    st.nSectors = s.get<int>("nSectors", st.nSectors);
    st.boresight = s.get<double>("boresight", st.boresight);
    st.txPower = s.get<double>("txPower", st.txPower);
    st.noiseFigure = s.get<double>("noiseFigure", st.noiseFigure);
    st.pattern.mainLobeGain = s.get<double>("mainLobeGain", st.pattern.mainLobeGain);
    st.pattern.sideLobeGain = s.get<double>("sideLobeGain", st.pattern.sideLobeGain);
    s.finish();
    if (st.nSectors < 1) throw SchemaError(p + ".nSectors: must be >= 1");
    if (!(st.pattern.mainLobeGain > st.pattern.sideLobeGain) && st.nSectors > 1)
      throw SchemaError(p + ".mainLobeGain: must exceed sideLobeGain");
    for (const auto& o : sc.stations)
      if (o.aid == st.aid) throw SchemaError(p + ".aid: duplicate aid " + std::to_string(st.aid));
    sc.stations.push_back(st);
  }
  auto hasAid = [&](Aid a) {
    return std::any_of(sc.stations.begin(), sc.stations.end(),
                       [a](const Station& s) { return s.aid == a; });
  };

  {
    static const json empty = json::object();
    auto it = doc.find("sim");
    Section s(it == doc.end() || it->is_null() ? empty : *it, "sim");
    sc.simDuration = s.get<Micros>("duration", sc.simDuration);
    sc.seed = s.get<std::uint64_t>("seed", sc.seed);
    sc.traceSampling = s.get<int>("traceSampling", sc.traceSampling);
    sc.channel.carrierHz = s.get<double>("carrierHz", sc.channel.carrierHz);
    sc.channel.pathLossExponent = s.get<double>("pathLossExponent", sc.channel.pathLossExponent);
    sc.channel.referenceDistance = s.get<double>("referenceDistance", sc.channel.referenceDistance);
    sc.channel.bandwidthHz = s.get<double>("bandwidthHz", sc.channel.bandwidthHz);
    s.finish();
    if (sc.simDuration < 0 || sc.simDuration % sc.bi.biDuration != 0)
      throw SchemaError("sim.duration: must be a non-negative multiple of bi.biDuration");
    if (sc.traceSampling < 1) throw SchemaError("sim.traceSampling: must be >= 1");
  }

  const auto& flows = detail::arrayAt(doc, "flows");
  for (std::size_t i = 0; i < flows.size(); ++i) {
    const std::string p = detail::indexed("flows", i);
    Section s(flows[i], p);
    TrafficSource f;
    f.flowId = s.require<FlowId>("flowId");
    f.srcAid = s.require<Aid>("src");
    f.dstAid = s.require<Aid>("dst");
    const auto kind = s.get<std::string>("kind", "CBR");
    const auto k = trafficKindFromString(kind);
    if (!k) throw SchemaError(p + ".kind: unknown traffic kind '" + kind + "'");
    f.kind = *k;
    f.meanRate = s.get<double>("meanRate", f.meanRate);
    f.packetSize = s.get<std::int64_t>("packetSize", f.packetSize);
    f.frameInterval = s.get<Micros>("frameInterval", f.frameInterval);
    f.frameJitter = s.get<double>("frameJitter", f.frameJitter);
    f.frameSizeSigma = s.get<double>("frameSizeSigma", f.frameSizeSigma);
    f.start = s.get<Micros>("start", f.start);
    f.stop = s.optional<Micros>("stop");
    f.queueCapacity = s.get<std::int64_t>("queueCapacity", f.queueCapacity);
    s.finish();
    if (!(f.meanRate > 0)) throw SchemaError(p + ".meanRate: must be > 0");
    if (f.packetSize <= 0) throw SchemaError(p + ".packetSize: must be > 0");
    if (f.frameInterval <= 0) throw SchemaError(p + ".frameInterval: must be > 0");
    if (f.frameJitter < 0 || f.frameSizeSigma < 0)
      throw SchemaError(p + ": jitter and frameSizeSigma must be >= 0");
    if (f.queueCapacity <= 0) throw SchemaError(p + ".queueCapacity: must be > 0");
    if (f.start < 0) throw SchemaError(p + ".start: must be >= 0");
    if (f.srcAid == f.dstAid) throw SchemaError(p + ": src and dst must differ");
    if (!hasAid(f.srcAid)) throw ReferenceError(p + ".src: unknown aid " + std::to_string(f.srcAid));
    if (!hasAid(f.dstAid)) throw ReferenceError(p + ".dst: unknown aid " + std::to_string(f.dstAid));
    if (sc.flow(f.flowId)) throw SchemaError(p + ".flowId: duplicate flowId");
    sc.flows.push_back(f);
  }

  const auto& tspecs = detail::arrayAt(doc, "tspecs");
  for (std::size_t i = 0; i < tspecs.size(); ++i) {
    const std::string p = detail::indexed("tspecs", i);
    Section s(tspecs[i], p);
    TspecRequest r;
    r.tspec.flowId = s.require<FlowId>("flowId");
    r.tspec.allocationPeriod = s.require<Micros>("allocationPeriod");
    r.tspec.minDuration = s.require<Micros>("minDuration");
    r.tspec.maxDuration = s.get<Micros>("maxDuration", r.tspec.minDuration);
    r.tspec.delayTarget = s.optional<Micros>("delayTarget");
    r.requestTime = s.get<Micros>("requestTime", 0);
    s.finish();
    const auto* f = sc.flow(r.tspec.flowId);
    if (!f) throw ReferenceError(p + ".flowId: unknown flow " + std::to_string(r.tspec.flowId));
    r.tspec.srcAid = f->srcAid;
    r.tspec.dstAid = f->dstAid;
    try {
      validateTspec(r.tspec, sc.bi);
    } catch (const MalformedTspec& e) {
      throw SchemaError(p + ": " + e.what());
    }
    if (r.requestTime < 0) throw SchemaError(p + ".requestTime: must be >= 0");
    sc.tspecs.push_back(r);
  }

  if (const auto* mt = root.raw("mcsTable")) {
    if (!mt->is_array()) throw SchemaError("mcsTable: expected an array");
    sc.mcsTable.entries.clear();
    for (std::size_t i = 0; i < mt->size(); ++i) {
      Section s((*mt)[i], detail::indexed("mcsTable", i));
      McsEntry e;
      e.index = s.require<McsIndex>("index");
      e.minSinr = s.require<double>("minSinr");
      e.phyRate = s.require<double>("phyRate");
      s.finish();
      sc.mcsTable.entries.push_back(e);
    }
  }
  sc.mcsTable.validate();

  {
    static const json empty = json::object();
    auto it = doc.find("mac");
    Section s(it == doc.end() || it->is_null() ? empty : *it, "mac");
    MacParams& m = sc.mac;
    m.cwMin = s.get<int>("cwMin", m.cwMin);
    m.cwMax = s.get<int>("cwMax", m.cwMax);
    m.slot = s.get<Micros>("slot", m.slot);
    m.perPacketOverhead = s.get<Micros>("perPacketOverhead", m.perPacketOverhead);
    m.retryLimit = s.get<int>("retryLimit", m.retryLimit);
    m.truncationOverhead = s.get<Micros>("truncationOverhead", m.truncationOverhead);
    m.extensionOverhead = s.get<Micros>("extensionOverhead", m.extensionOverhead);
    m.truncation = s.get<bool>("truncation", m.truncation);
    m.extension = s.get<bool>("extension", m.extension);
    m.spatialSharing = s.get<bool>("spatialSharing", m.spatialSharing);
    m.spatialMargin = s.get<double>("spatialMargin", m.spatialMargin);
    m.measurementOverhead = s.get<Micros>("measurementOverhead", m.measurementOverhead);
    m.tspecAdaptation = s.get<bool>("tspecAdaptation", m.tspecAdaptation);
    m.tspecStep = s.get<Micros>("tspecStep", m.tspecStep);
    m.tspecRelaxBis = s.get<int>("tspecRelaxBis", m.tspecRelaxBis);
    m.suggestMinScale = s.get<double>("suggestMinScale", m.suggestMinScale);
    sc.mcsMargin = s.get<double>("mcsMargin", sc.mcsMargin);
    s.finish();
    if (m.cwMin < 0 || m.cwMax < m.cwMin) throw SchemaError("mac.cwMax: must be >= cwMin >= 0");
    if (m.slot <= 0) throw SchemaError("mac.slot: must be > 0");
    if (m.perPacketOverhead < 0 || m.truncationOverhead < 0 || m.extensionOverhead < 0 ||
        m.measurementOverhead < 0)
      throw SchemaError("mac: overheads must be >= 0");
    if (m.retryLimit < 0) throw SchemaError("mac.retryLimit: must be >= 0");
    if (m.tspecStep <= 0 || m.tspecRelaxBis < 1) throw SchemaError("mac.tspecStep/tspecRelaxBis: must be positive");
    if (!(m.suggestMinScale > 0 && m.suggestMinScale <= 1))
      throw SchemaError("mac.suggestMinScale: must be in (0, 1]");
  }

  const auto& blockages = detail::arrayAt(doc, "blockages");
  for (std::size_t i = 0; i < blockages.size(); ++i) {
    const std::string p = detail::indexed("blockages", i);
    Section s(blockages[i], p);
    BlockageEvent b;
    b.srcAid = s.require<Aid>("src");
    b.dstAid = s.require<Aid>("dst");
    b.start = s.require<Micros>("start");
    b.end = s.require<Micros>("end");
    b.attenuation = s.require<double>("attenuation");
    s.finish();
    if (b.end <= b.start || b.start < 0) throw SchemaError(p + ": need 0 <= start < end");
    if (b.attenuation < 0) throw SchemaError(p + ".attenuation: must be >= 0");
    if (!hasAid(b.srcAid)) throw ReferenceError(p + ".src: unknown aid " + std::to_string(b.srcAid));
    if (!hasAid(b.dstAid)) throw ReferenceError(p + ".dst: unknown aid " + std::to_string(b.dstAid));
    sc.blockages.push_back(b);
  }

  // Link geometry must be usable.
  const World w = sc.world();
  for (const auto& f : sc.flows) {
    try {
      resolveLink(w, f.srcAid, f.dstAid);
    } catch (const DegenerateGeometry& e) {
      throw SchemaError("flows: flow " + std::to_string(f.flowId) + ": " + e.what());
    }
  }
  return sc;
}

inline Scenario loadScenarioText(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("scenario is not valid JSON: ") + e.what());
  }
  return loadScenario(j);
}

inline Scenario loadScenarioFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open scenario file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return loadScenarioText(ss.str());
}

/// Effective configuration with every default explicit; loadScenario of the
/// result reproduces the scenario exactly.
inline nlohmann::json scenarioToJson(const Scenario& sc) {
  using nlohmann::json;
  json j;
  j["bi"] = {{"biDuration", sc.bi.biDuration},
             {"bhiDuration", sc.bi.bhiDuration},
             {"guardTime", sc.bi.guardTime},
             {"defaultCbap", sc.bi.defaultCbap}};
  j["stations"] = json::array();
  for (const auto& s : sc.stations)
    j["stations"].push_back({{"aid", s.aid},
                             {"role", s.role == StationRole::PcpAp ? "PCP_AP" : "STA"},
                             {"x", s.position.x},
                             {"y", s.position.y},
                             {"nSectors", s.nSectors},
                             {"boresight", s.boresight},
                             {"txPower", s.txPower},
                             {"noiseFigure", s.noiseFigure},
                             {"mainLobeGain", s.pattern.mainLobeGain},
                             {"sideLobeGain", s.pattern.sideLobeGain}});
  j["flows"] = json::array();
  for (const auto& f : sc.flows) {
    json o = {{"flowId", f.flowId},
              {"src", f.srcAid},
              {"dst", f.dstAid},
              {"kind", toString(f.kind)},
              {"meanRate", f.meanRate},
              {"packetSize", f.packetSize},
              {"frameInterval", f.frameInterval},
              {"frameJitter", f.frameJitter},
              {"frameSizeSigma", f.frameSizeSigma},
              {"start", f.start},
              {"queueCapacity", f.queueCapacity}};
    o["stop"] = f.stop ? json(*f.stop) : json(nullptr);
    j["flows"].push_back(o);
  }
  j["tspecs"] = json::array();
  for (const auto& r : sc.tspecs) {
    json o = {{"flowId", r.tspec.flowId},
              {"allocationPeriod", r.tspec.allocationPeriod},
              {"minDuration", r.tspec.minDuration},
              {"maxDuration", r.tspec.maxDuration},
              {"requestTime", r.requestTime}};
    o["delayTarget"] = r.tspec.delayTarget ? json(*r.tspec.delayTarget) : json(nullptr);
    j["tspecs"].push_back(o);
  }
  j["mcsTable"] = json::array();
  for (const auto& e : sc.mcsTable.entries)
    j["mcsTable"].push_back({{"index", e.index}, {"minSinr", e.minSinr}, {"phyRate", e.phyRate}});
  const auto& m = sc.mac;
  j["mac"] = {{"cwMin", m.cwMin},
              {"cwMax", m.cwMax},
              {"slot", m.slot},
              {"perPacketOverhead", m.perPacketOverhead},
              {"retryLimit", m.retryLimit},
              {"truncationOverhead", m.truncationOverhead},
              {"extensionOverhead", m.extensionOverhead},
              {"truncation", m.truncation},
              {"extension", m.extension},
              {"spatialSharing", m.spatialSharing},
              {"spatialMargin", m.spatialMargin},
              {"measurementOverhead", m.measurementOverhead},
              {"tspecAdaptation", m.tspecAdaptation},
              {"tspecStep", m.tspecStep},
              {"tspecRelaxBis", m.tspecRelaxBis},
              {"suggestMinScale", m.suggestMinScale},
              {"mcsMargin", sc.mcsMargin}};
  j["blockages"] = json::array();
  for (const auto& b : sc.blockages)
    j["blockages"].push_back({{"src", b.srcAid},
                              {"dst", b.dstAid},
                              {"start", b.start},
                              {"end", b.end},
                              {"attenuation", b.attenuation}});
  j["sim"] = {{"duration", sc.simDuration},
              {"seed", sc.seed},
              {"traceSampling", sc.traceSampling},
              {"carrierHz", sc.channel.carrierHz},
              {"pathLossExponent", sc.channel.pathLossExponent},
              {"referenceDistance", sc.channel.referenceDistance},
              {"bandwidthHz", sc.channel.bandwidthHz}};
  return j;
}

}  // namespace dmgsim
