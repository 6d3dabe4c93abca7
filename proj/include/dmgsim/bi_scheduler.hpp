#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmgsim/common.hpp"

namespace dmgsim {

/// Beacon-interval geometry. The beacon header (BTI + A-BFT + ATI) is one
/// opaque overhead at the start of every BI; the rest is the DTI.
struct BiConfig {
  Micros biDuration = 100'000;
  Micros bhiDuration = 2'000;
  Micros guardTime = 1;
  bool defaultCbap = true;

  Micros dtiDuration() const { return biDuration - bhiDuration; }
  bool operator==(const BiConfig&) const = default;
};

inline void validateBiConfig(const BiConfig& c) {
  if (c.bhiDuration < 0) throw SchemaError("bi.bhiDuration must be >= 0");
  if (c.biDuration <= c.bhiDuration)
    throw SchemaError("bi.biDuration must exceed bi.bhiDuration");
  if (c.guardTime < 0) throw SchemaError("bi.guardTime must be >= 0");
}

enum class AllocKind { Cbap, Sp };

inline const char* toString(AllocKind k) { return k == AllocKind::Cbap ? "CBAP" : "SP"; }

struct Allocation {
  AllocId allocId = 0;
  AllocKind kind = AllocKind::Sp;
  std::optional<Aid> srcAid;
  std::optional<Aid> dstAid;  // unset for a CBAP open to all
  Micros startOffset = 0;
  Micros duration = 0;
  std::optional<std::uint32_t> spatialGroup;
  std::optional<FlowId> flowId;  // owning flow of an SP, when known

  Micros end() const { return startOffset + duration; }
  bool isSp() const { return kind == AllocKind::Sp; }
  bool operator==(const Allocation&) const = default;
};

/// May a and b occupy the same instant? Only members of one spatial group may.
inline bool mayOverlap(const Allocation& a, const Allocation& b) {
  return a.spatialGroup && b.spatialGroup && *a.spatialGroup == *b.spatialGroup;
}

inline bool intersects(const Allocation& a, const Allocation& b) {
  return a.startOffset < b.end() && b.startOffset < a.end();
}

/// A flow's allocation request: one SP instance of [minDuration, maxDuration]
/// every allocationPeriod.
struct TSpec {
  FlowId flowId = 0;
  Aid srcAid = 0;
  Aid dstAid = 0;
  Micros allocationPeriod = 0;
  Micros minDuration = 0;
  Micros maxDuration = 0;
  std::optional<Micros> delayTarget;

  bool operator==(const TSpec&) const = default;
};

inline void validateTspec(const TSpec& t, const BiConfig& c) {
  auto fail = [&](const std::string& why) {
    throw MalformedTspec("flow " + std::to_string(t.flowId) + ": " + why);
  };
  if (t.minDuration <= 0) fail("minDuration must be > 0");
  if (t.minDuration > t.maxDuration) fail("minDuration exceeds maxDuration");
  if (t.maxDuration > t.allocationPeriod) fail("maxDuration exceeds allocationPeriod");
  if (t.allocationPeriod > c.biDuration) fail("allocationPeriod exceeds biDuration");
  if (t.delayTarget && *t.delayTarget <= 0) fail("delayTarget must be > 0");
}

struct Schedule {
  std::uint64_t biIndex = 0;
  std::vector<Allocation> allocations;  // sorted by startOffset

  std::vector<Allocation> servicePeriods() const {
    std::vector<Allocation> out;
    for (const auto& a : allocations)
      if (a.isSp()) out.push_back(a);
    return out;
  }
  bool operator==(const Schedule&) const = default;
};

/// CBAPs generated to fill DTI gaps take ids from this range.
inline constexpr AllocId kCbapIdBase = 0x8000'0000u;

namespace detail {

inline void sortAllocations(std::vector<Allocation>& v) {
  std::stable_sort(v.begin(), v.end(), [](const Allocation& a, const Allocation& b) {
    if (a.startOffset != b.startOffset) return a.startOffset < b.startOffset;
    return a.allocId < b.allocId;
  });
}

/// Merged [start, end) intervals covered by the allocations.
inline std::vector<std::pair<Micros, Micros>> occupiedIntervals(std::vector<Allocation> v) {
  detail::sortAllocations(v);
  std::vector<std::pair<Micros, Micros>> out;
  for (const auto& a : v) {
    if (!out.empty() && a.startOffset <= out.back().second)
      out.back().second = std::max(out.back().second, a.end());
    else
      out.emplace_back(a.startOffset, a.end());
  }
  return out;
}

}  // namespace detail

/// DTI time covered by at least one allocation; shared instants count once.
inline Micros occupiedTime(const Schedule& s) {
  Micros total = 0;
  for (auto [b, e] : detail::occupiedIntervals(s.allocations)) total += e - b;
  return total;
}

// ---------------------------------------------------------------------------
// Validation

enum class ViolationKind { Overlap, Bounds, NonPositiveDuration, MissingEndpoint, Unordered, DuplicateId };

inline const char* toString(ViolationKind k) {
  switch (k) {
    case ViolationKind::Overlap: return "Overlap";
    case ViolationKind::Bounds: return "Bounds";
    case ViolationKind::NonPositiveDuration: return "NonPositiveDuration";
    case ViolationKind::MissingEndpoint: return "MissingEndpoint";
    case ViolationKind::Unordered: return "Unordered";
    case ViolationKind::DuplicateId: return "DuplicateId";
  }
  return "?";
}

struct Violation {
  ViolationKind kind;
  std::vector<AllocId> allocIds;
};

struct ValidationResult {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  bool has(ViolationKind k) const {
    return std::any_of(violations.begin(), violations.end(),
                       [k](const Violation& v) { return v.kind == k; });
  }
};

inline ValidationResult validateSchedule(const Schedule& s, const BiConfig& config) {
  ValidationResult r;
  const auto& v = s.allocations;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& a = v[i];
    if (a.duration <= 0) r.violations.push_back({ViolationKind::NonPositiveDuration, {a.allocId}});
    if (a.startOffset < config.bhiDuration || a.end() > config.biDuration)
      r.violations.push_back({ViolationKind::Bounds, {a.allocId}});
    if (a.isSp() && (!a.srcAid || !a.dstAid))
      r.violations.push_back({ViolationKind::MissingEndpoint, {a.allocId}});
    if (i > 0 && v[i - 1].startOffset > a.startOffset)
      r.violations.push_back({ViolationKind::Unordered, {v[i - 1].allocId, a.allocId}});
    for (std::size_t j = 0; j < i; ++j) {
      if (v[j].allocId == a.allocId)
        r.violations.push_back({ViolationKind::DuplicateId, {a.allocId}});
      if (intersects(v[j], a) && !mayOverlap(v[j], a))
        r.violations.push_back({ViolationKind::Overlap, {v[j].allocId, a.allocId}});
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Construction

/// Lays out the given allocations in one BI and, when defaultCbap is set,
/// turns every free DTI gap of at least one guard time into a CBAP.
inline Schedule buildBeaconInterval(const BiConfig& config, std::vector<Allocation> sps,
                                    std::uint64_t biIndex = 0) {
  for (const auto& a : sps) {
    if (a.duration <= 0 || a.startOffset < config.bhiDuration || a.end() > config.biDuration)
      throw BoundsError("allocation " + std::to_string(a.allocId) + " [" +
                        std::to_string(a.startOffset) + ", " + std::to_string(a.end()) +
                        ") leaves the DTI");
  }
  detail::sortAllocations(sps);
  for (std::size_t i = 0; i < sps.size(); ++i)
    for (std::size_t j = i + 1; j < sps.size() && sps[j].startOffset < sps[i].end(); ++j)
      if (!mayOverlap(sps[i], sps[j]))
        throw OverlapError("allocations " + std::to_string(sps[i].allocId) + " and " +
                           std::to_string(sps[j].allocId) + " overlap");

  Schedule s{biIndex, sps};
  if (config.defaultCbap) {
    const Micros minGap = std::max<Micros>(config.guardTime, 1);
    AllocId next = kCbapIdBase;
    Micros cursor = config.bhiDuration;
    auto fill = [&](Micros until) {
      if (until - cursor >= minGap) {
        Allocation c;
        c.allocId = next++;
        c.kind = AllocKind::Cbap;
        c.startOffset = cursor;
        c.duration = until - cursor;
        s.allocations.push_back(c);
      }
    };
    for (auto [b, e] : detail::occupiedIntervals(sps)) {
      fill(b);
      cursor = std::max(cursor, e);
    }
    fill(config.biDuration);
    detail::sortAllocations(s.allocations);
  }
  return s;
}

struct PlacementOptions {
  Micros duration = 0;  // 0 selects the TSPEC's minDuration
  AllocId firstId = 1;
};

/// Earliest start >= from at which [start, start + duration) clears every
/// occupied interval by at least `guard`.
inline Micros earliestFit(const std::vector<Allocation>& occupied, Micros from, Micros duration,
                          Micros guard) {
  Micros c = from;
  for (bool moved = true; moved;) {
    moved = false;
    for (const auto& o : occupied) {
      if (c < o.end() + guard && c + duration > o.startOffset - guard) {
        c = o.end() + guard;
        moved = true;
      }
    }
  }
  return c;
}

/// Places one SP per allocation-period window, earliest fit inside each window.
/// Only SPs in `s` count as occupied: CBAPs are regenerated around the result.
inline std::vector<Allocation> placePeriodicAllocation(const Schedule& s, const TSpec& t,
                                                       const BiConfig& config,
                                                       PlacementOptions opt = {}) {
  validateTspec(t, config);
  const Micros duration =
      std::clamp(opt.duration > 0 ? opt.duration : t.minDuration, t.minDuration, t.maxDuration);
  std::vector<Allocation> occupied = s.servicePeriods();
  std::vector<Allocation> placed;
  const Micros windows = config.biDuration / t.allocationPeriod;
  for (Micros k = 0; k < windows; ++k) {
    const Micros ws = std::max(k * t.allocationPeriod, config.bhiDuration);
    const Micros we = std::min((k + 1) * t.allocationPeriod, config.biDuration);
    const Micros start = earliestFit(occupied, ws, duration, config.guardTime);
    if (start + duration > we)
      throw CapacityError("flow " + std::to_string(t.flowId) + ": window " + std::to_string(k) +
                          " cannot fit " + std::to_string(duration) + " us");
    Allocation a;
    a.allocId = opt.firstId + static_cast<AllocId>(k);
    a.kind = AllocKind::Sp;
    a.srcAid = t.srcAid;
    a.dstAid = t.dstAid;
    a.startOffset = start;
    a.duration = duration;
    a.flowId = t.flowId;
    occupied.push_back(a);
    placed.push_back(a);
  }
  return placed;
}

// ---------------------------------------------------------------------------
// Extended Schedule Element

struct EseRecord {
  AllocId allocId = 0;
  AllocKind kind = AllocKind::Sp;
  std::optional<Aid> srcAid;
  std::optional<Aid> dstAid;
  Micros startOffset = 0;
  Micros duration = 0;
  std::optional<std::uint32_t> spatialGroup;
  std::optional<FlowId> flowId;

  bool operator==(const EseRecord&) const = default;
};

inline std::vector<EseRecord> serializeEse(const Schedule& s) {
  std::vector<EseRecord> out;
  out.reserve(s.allocations.size());
  for (const auto& a : s.allocations)
    out.push_back({a.allocId, a.kind, a.srcAid, a.dstAid, a.startOffset, a.duration,
                   a.spatialGroup, a.flowId});
  return out;
}

inline Schedule parseEse(const std::vector<EseRecord>& records, std::uint64_t biIndex) {
  Schedule s{biIndex, {}};
  for (const auto& r : records)
    s.allocations.push_back({r.allocId, r.kind, r.srcAid, r.dstAid, r.startOffset, r.duration,
                             r.spatialGroup, r.flowId});
  return s;
}

/// Aids that appear in no SP of the schedule; they may doze through the DTI's SPs.
inline std::vector<Aid> dozeCandidates(const std::vector<EseRecord>& ese,
                                       const std::vector<Aid>& stations) {
  std::vector<Aid> out;
  for (Aid aid : stations) {
    bool named = std::any_of(ese.begin(), ese.end(), [aid](const EseRecord& r) {
      return r.kind == AllocKind::Sp && (r.srcAid == aid || r.dstAid == aid);
    });
    if (!named) out.push_back(aid);
  }
  return out;
}

inline nlohmann::json toJson(const EseRecord& r) {
  nlohmann::json j = {{"allocId", r.allocId},
                      {"kind", toString(r.kind)},
                      {"startOffset", r.startOffset},
                      {"duration", r.duration}};
  j["srcAid"] = r.srcAid ? nlohmann::json(*r.srcAid) : nlohmann::json(nullptr);
  j["dstAid"] = r.dstAid ? nlohmann::json(*r.dstAid) : nlohmann::json(nullptr);
  j["spatialGroup"] = r.spatialGroup ? nlohmann::json(*r.spatialGroup) : nlohmann::json(nullptr);
  j["flowId"] = r.flowId ? nlohmann::json(*r.flowId) : nlohmann::json(nullptr);
  return j;
}

inline EseRecord eseRecordFromJson(const nlohmann::json& j) {
  auto opt = [&](const char* key) -> const nlohmann::json* {
    auto it = j.find(key);
    return it == j.end() || it->is_null() ? nullptr : &*it;
  };
  EseRecord r;
  try {
    r.allocId = j.at("allocId").get<AllocId>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "SP")
      r.kind = AllocKind::Sp;
    else if (kind == "CBAP")
      r.kind = AllocKind::Cbap;
    else
      throw SchemaError("ESE record: unknown kind '" + kind + "'");
    r.startOffset = j.at("startOffset").get<Micros>();
    r.duration = j.at("duration").get<Micros>();
    if (auto* v = opt("srcAid")) r.srcAid = v->get<Aid>();
    if (auto* v = opt("dstAid")) r.dstAid = v->get<Aid>();
    if (auto* v = opt("spatialGroup")) r.spatialGroup = v->get<std::uint32_t>();
    if (auto* v = opt("flowId")) r.flowId = v->get<FlowId>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("ESE record: ") + e.what());
  }
  return r;
}

}  // namespace dmgsim
