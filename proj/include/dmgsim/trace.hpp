#pragma once

#include <cstring>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmgsim/bi_scheduler.hpp"
#include "dmgsim/common.hpp"

namespace dmgsim {

enum class TraceType {
  BiStart,
  Ese,
  Arrival,
  Drop,
  Tx,
  SpStart,
  SpEnd,
  CbapStart,
  CbapEnd,
  Truncate,
  Extend,
  Measure,
  BlockageOn,
  BlockageOff,
  AddtsRequest,
  AddtsResponse,
};

inline const char* toString(TraceType t) {
  switch (t) {
    case TraceType::BiStart: return "BI_START";
    case TraceType::Ese: return "ESE";
    case TraceType::Arrival: return "ARRIVAL";
    case TraceType::Drop: return "DROP";
    case TraceType::Tx: return "TX";
    case TraceType::SpStart: return "SP_START";
    case TraceType::SpEnd: return "SP_END";
    case TraceType::CbapStart: return "CBAP_START";
    case TraceType::CbapEnd: return "CBAP_END";
    case TraceType::Truncate: return "TRUNCATE";
    case TraceType::Extend: return "EXTEND";
    case TraceType::Measure: return "MEASURE";
    case TraceType::BlockageOn: return "BLOCKAGE_ON";
    case TraceType::BlockageOff: return "BLOCKAGE_OFF";
    case TraceType::AddtsRequest: return "ADDTS_REQ";
    case TraceType::AddtsResponse: return "ADDTS_RESP";
  }
  return "?";
}

inline std::optional<TraceType> traceTypeFromString(const std::string& s) {
  for (int i = 0; i <= static_cast<int>(TraceType::AddtsResponse); ++i)
    if (s == toString(static_cast<TraceType>(i))) return static_cast<TraceType>(i);
  return std::nullopt;
}

/// One line of the run log. `duration` is the channel time the record
/// occupies (transmissions and signalling), zero otherwise. ESE lines carry
/// the announced allocation.
struct TraceRecord {
  Micros time = 0;
  TraceType type = TraceType::Tx;
  std::optional<FlowId> flowId;
  std::int64_t bits = 0;
  std::optional<McsIndex> mcs;
  std::string outcome;
  Micros duration = 0;
  std::optional<EseRecord> ese;

  bool operator==(const TraceRecord&) const = default;
};

inline nlohmann::json toJson(const TraceRecord& r) {
  using nlohmann::json;
  json j = {{"time", r.time}, {"type", toString(r.type)}};
  j["flowId"] = r.flowId ? json(*r.flowId) : json(nullptr);
  j["bits"] = r.bits;
  j["mcs"] = r.mcs ? json(*r.mcs) : json(nullptr);
  j["outcome"] = r.outcome;
  j["duration"] = r.duration;
  if (r.ese) j["allocation"] = toJson(*r.ese);
  return j;
}

inline TraceRecord traceRecordFromJson(const nlohmann::json& j) {
  TraceRecord r;
  try {
    r.time = j.at("time").get<Micros>();
    const auto type = traceTypeFromString(j.at("type").get<std::string>());
    if (!type) throw SchemaError("trace record: unknown type");
    r.type = *type;
    if (!j.at("flowId").is_null()) r.flowId = j.at("flowId").get<FlowId>();
    r.bits = j.at("bits").get<std::int64_t>();
    if (!j.at("mcs").is_null()) r.mcs = j.at("mcs").get<McsIndex>();
    r.outcome = j.at("outcome").get<std::string>();
    r.duration = j.value("duration", Micros{0});
    if (auto it = j.find("allocation"); it != j.end()) r.ese = eseRecordFromJson(*it);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("trace record: ") + e.what());
  }
  return r;
}

/// 64-bit FNV-1a.
class Fnv1a {
public:
  void add(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  template <typename T>
    requires std::is_arithmetic_v<T>
  void add(T v) {
    add(&v, sizeof v);
  }
  void add(const std::string& s) {
    add(static_cast<std::uint64_t>(s.size()));
    add(s.data(), s.size());
  }
  std::uint64_t value() const { return h_; }

private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

struct TraceOptions {
  bool keep = false;             // retain records in memory
  std::ostream* out = nullptr;   // newline-delimited JSON sink
  int sampling = 1;              // write every n-th ARRIVAL/TX line; control lines always
};

/// Receives every record. The running hash covers the full trace regardless
/// of sampling, so determinism checks never need the records themselves.
class TraceSink {
public:
  explicit TraceSink(TraceOptions opt = {}) : opt_(opt) {}

  void emit(const TraceRecord& r) {
    hashRecord(r);
    ++count_;
    if (opt_.keep) records_.push_back(r);
    if (opt_.out) {
      const bool sampled = r.type == TraceType::Arrival || r.type == TraceType::Tx;
      if (!sampled || opt_.sampling <= 1 || (sampledCount_++ % opt_.sampling) == 0)
        *opt_.out << toJson(r).dump() << '\n';
    }
  }

  std::uint64_t hash() const { return hash_.value(); }
  std::uint64_t count() const { return count_; }
  const std::vector<TraceRecord>& records() const { return records_; }

private:
  void hashRecord(const TraceRecord& r) {
    hash_.add(r.time);
    hash_.add(static_cast<int>(r.type));
    hash_.add(r.flowId ? static_cast<std::int64_t>(*r.flowId) : std::int64_t{-1});
    hash_.add(r.bits);
    hash_.add(r.mcs ? *r.mcs : -1);
    hash_.add(r.outcome);
    hash_.add(r.duration);
    if (r.ese) {
      const auto& e = *r.ese;
      hash_.add(e.allocId);
      hash_.add(static_cast<int>(e.kind));
      hash_.add(e.srcAid ? static_cast<int>(*e.srcAid) : -1);
      hash_.add(e.dstAid ? static_cast<int>(*e.dstAid) : -1);
      hash_.add(e.startOffset);
      hash_.add(e.duration);
      hash_.add(e.spatialGroup ? static_cast<std::int64_t>(*e.spatialGroup) : std::int64_t{-1});
      hash_.add(e.flowId ? static_cast<std::int64_t>(*e.flowId) : std::int64_t{-1});
    }
  }

  TraceOptions opt_;
  Fnv1a hash_;
  std::uint64_t count_ = 0;
  std::uint64_t sampledCount_ = 0;
  std::vector<TraceRecord> records_;
};

}  // namespace dmgsim
