#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dmgsim/bi_scheduler.hpp"
#include "dmgsim/common.hpp"

namespace dmgsim {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kSpeedOfLight = 299'792'458.0;
/// Highest DMG single-carrier PHY rate.
inline constexpr double kMaxPhyRate = 6.75e9;

struct Position {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Position&) const = default;
};

inline double distance(const Position& a, const Position& b) {
  return std::hypot(b.x - a.x, b.y - a.y);
}

/// Flat-top two-level antenna pattern.
struct SectorPattern {
  double mainLobeGain = 15.0;  // dBi
  double sideLobeGain = -10.0;  // dBi
  bool operator==(const SectorPattern&) const = default;
};

enum class StationRole { PcpAp, Sta };

struct Station {
  Aid aid = 0;
  Position position;
  int nSectors = 8;
  double boresight = 0.0;  // radians; sector 0 starts here, counter-clockwise
  double txPower = 10.0;   // dBm
  double noiseFigure = 10.0;  // dB
  StationRole role = StationRole::Sta;
  SectorPattern pattern;

  double beamwidth() const { return 2.0 * kPi / nSectors; }
  bool operator==(const Station&) const = default;
};

struct ChannelParams {
  double carrierHz = 60e9;
  double pathLossExponent = 2.5;
  double referenceDistance = 1.0;  // m
  double bandwidthHz = 2.16e9;
  bool operator==(const ChannelParams&) const = default;
};

/// Index of the sector of `s` whose wedge contains the direction to `target`.
inline int sectorToward(const Station& s, const Position& target) {
  double angle = std::atan2(target.y - s.position.y, target.x - s.position.x) - s.boresight;
  angle = std::fmod(angle, 2.0 * kPi);
  if (angle < 0) angle += 2.0 * kPi;
  const int k = static_cast<int>(std::floor(angle / s.beamwidth()));
  return std::clamp(k, 0, s.nSectors - 1);
}

inline double sectorGain(const Station& s, int sector, const Position& toward) {
  return sectorToward(s, toward) == sector ? s.pattern.mainLobeGain : s.pattern.sideLobeGain;
}

/// Log-distance path loss anchored to free space at the reference distance.
inline double pathLossDb(double d, const ChannelParams& ch) {
  const double fspl = 20.0 * std::log10(4.0 * kPi * d * ch.carrierHz / kSpeedOfLight);
  return fspl + 10.0 * (ch.pathLossExponent - 2.0) * std::log10(d / ch.referenceDistance);
}

/// Antenna gains minus path loss between tx (using txSector) and rx (using rxSector), in dB.
inline double pathGain(const Station& tx, const Station& rx, int txSector, int rxSector,
                       const ChannelParams& ch) {
  const double d = distance(tx.position, rx.position);
  if (!(d > 0.0))
    throw DegenerateGeometry("stations " + std::to_string(tx.aid) + " and " +
                             std::to_string(rx.aid) + " are co-located");
  return sectorGain(tx, txSector, rx.position) + sectorGain(rx, rxSector, tx.position) -
         pathLossDb(d, ch);
}

/// Thermal noise over the channel plus the receiver noise figure, in dBm.
inline double noiseFloorDbm(const Station& rx, const ChannelParams& ch) {
  return -174.0 + 10.0 * std::log10(ch.bandwidthHz) + rx.noiseFigure;
}

// ---------------------------------------------------------------------------
// MCS

struct McsEntry {
  McsIndex index = 0;
  double minSinr = 0.0;  // dB
  double phyRate = 0.0;  // bit/s
  bool operator==(const McsEntry&) const = default;
};

struct McsTable {
  std::vector<McsEntry> entries;  // ascending index

  /// 8 entries, thresholds 1..22 dB in 3 dB steps, rates geometric 385 Mb/s .. 6.75 Gb/s.
  static McsTable defaults() {
    McsTable t;
    const double lo = 385e6;
    const double ratio = kMaxPhyRate / lo;
    for (int i = 0; i < 8; ++i) {
      double rate = i == 7 ? kMaxPhyRate : lo * std::pow(ratio, i / 7.0);
      t.entries.push_back({i + 1, 1.0 + 3.0 * i, rate});
    }
    return t;
  }

  void validate() const {
    if (entries.empty()) throw SchemaError("mcsTable must not be empty");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      if (!(e.phyRate > 0) || e.phyRate > kMaxPhyRate)
        throw SchemaError("mcsTable[" + std::to_string(i) + "].phyRate must be in (0, 6.75e9]");
      if (i > 0) {
        const auto& p = entries[i - 1];
        if (e.index <= p.index) throw SchemaError("mcsTable indices must increase");
        if (e.minSinr <= p.minSinr) throw SchemaError("mcsTable minSinr must strictly increase");
        if (e.phyRate < p.phyRate) throw SchemaError("mcsTable phyRate must not decrease");
      }
    }
  }

  const McsEntry& at(McsIndex index) const {
    for (const auto& e : entries)
      if (e.index == index) return e;
    throw SchemaError("no MCS with index " + std::to_string(index));
  }
  double rate(McsIndex index) const { return at(index).phyRate; }
  const McsEntry& lowest() const { return entries.front(); }
  const McsEntry& highest() const { return entries.back(); }
  bool operator==(const McsTable&) const = default;
};

/// Highest MCS whose threshold plus margin the SINR meets; nullopt is outage.
inline std::optional<McsIndex> selectMcs(double sinrDb, const McsTable& table, double marginDb) {
  std::optional<McsIndex> best;
  for (const auto& e : table.entries)
    if (e.minSinr + marginDb <= sinrDb) best = e.index;
  return best;
}

// ---------------------------------------------------------------------------
// World and links

struct World {
  std::map<Aid, Station> stations;
  ChannelParams channel;
  McsTable mcsTable = McsTable::defaults();
  double mcsMargin = 2.0;

  const Station& station(Aid aid) const {
    auto it = stations.find(aid);
    if (it == stations.end()) throw ReferenceError("unknown station aid " + std::to_string(aid));
    return it->second;
  }
};

struct LinkState {
  Aid srcAid = 0;
  Aid dstAid = 0;
  int bestTxSector = 0;
  int bestRxSector = 0;
  double baseSnr = 0.0;      // dB, unobstructed
  double attenuation = 0.0;  // dB of active blockage
  double snr = 0.0;          // dB, baseSnr - attenuation
  std::optional<McsIndex> mcs;
  bool blocked = false;

  bool inOutage() const { return !mcs.has_value(); }
  bool operator==(const LinkState&) const = default;
};

/// Received power in dBm at `rx` (listening on rxSector) from `tx` on txSector.
inline double receivedPowerDbm(const World& w, Aid tx, int txSector, Aid rx, int rxSector) {
  const auto& t = w.station(tx);
  return t.txPower + pathGain(t, w.station(rx), txSector, rxSector, w.channel);
}

/// Link with static best-sector alignment and MCS chosen from its SNR.
inline LinkState resolveLink(const World& w, Aid src, Aid dst) {
  const auto& s = w.station(src);
  const auto& d = w.station(dst);
  LinkState l;
  l.srcAid = src;
  l.dstAid = dst;
  l.bestTxSector = sectorToward(s, d.position);
  l.bestRxSector = sectorToward(d, s.position);
  l.baseSnr = receivedPowerDbm(w, src, l.bestTxSector, dst, l.bestRxSector) -
              noiseFloorDbm(d, w.channel);
  l.snr = l.baseSnr;
  l.mcs = selectMcs(l.snr, w.mcsTable, w.mcsMargin);
  return l;
}

struct Interferer {
  Aid txAid = 0;
  int txSector = 0;
};

/// Linear-domain S / (N + sum I) at the link's receiver, in dB.
inline double sinr(const LinkState& link, const std::vector<Interferer>& concurrent, const World& w) {
  const auto& rx = w.station(link.dstAid);
  const double signal = dbToLinear(
      receivedPowerDbm(w, link.srcAid, link.bestTxSector, link.dstAid, link.bestRxSector) -
      link.attenuation);
  double denom = dbToLinear(noiseFloorDbm(rx, w.channel));
  for (const auto& i : concurrent)
    denom += dbToLinear(receivedPowerDbm(w, i.txAid, i.txSector, link.dstAid, link.bestRxSector));
  return linearToDb(signal / denom);
}

inline LinkState withAttenuation(LinkState link, double attenuationDb, const McsTable& table,
                                 double marginDb) {
  link.attenuation = attenuationDb;
  link.snr = link.baseSnr - attenuationDb;
  link.blocked = attenuationDb > 0.0;
  link.mcs = selectMcs(link.snr, table, marginDb);
  return link;
}

/// Square-wave attenuation on one directed link, active on [start, end).
struct BlockageEvent {
  Aid srcAid = 0;
  Aid dstAid = 0;
  Micros start = 0;
  Micros end = 0;
  double attenuation = 0.0;  // dB
  bool operator==(const BlockageEvent&) const = default;
};

inline LinkState applyBlockage(const LinkState& link, const BlockageEvent& e,
                               const McsTable& table, double marginDb) {
  return withAttenuation(link, link.attenuation + e.attenuation, table, marginDb);
}

inline LinkState expireBlockage(const LinkState& link, const BlockageEvent& e,
                                const McsTable& table, double marginDb) {
  const double remaining = link.attenuation - e.attenuation;
  return withAttenuation(link, remaining > 1e-9 ? remaining : 0.0, table, marginDb);
}

// ---------------------------------------------------------------------------
// Spatial sharing

inline bool sharesStation(const LinkState& a, const LinkState& b) {
  return a.srcAid == b.srcAid || a.srcAid == b.dstAid || a.dstAid == b.srcAid ||
         a.dstAid == b.dstAid;
}

/// True iff, with both transmitters active, each receiver still supports its
/// link's current MCS plus `marginDb`.
inline bool spatialCompatibility(const LinkState& a, const LinkState& b, const World& w,
                                 double marginDb) {
  if (sharesStation(a, b) || a.inOutage() || b.inOutage()) return false;
  auto holds = [&](const LinkState& link, const LinkState& other) {
    const double s = sinr(link, {{other.srcAid, other.bestTxSector}}, w);
    return s >= w.mcsTable.at(*link.mcs).minSinr + marginDb;
  };
  return holds(a, b) && holds(b, a);
}

inline bool spatialCompatibility(const Allocation& a, const Allocation& b, const World& w,
                                 double marginDb) {
  if (!a.isSp() || !b.isSp() || !a.srcAid || !a.dstAid || !b.srcAid || !b.dstAid) return false;
  return spatialCompatibility(resolveLink(w, *a.srcAid, *a.dstAid),
                              resolveLink(w, *b.srcAid, *b.dstAid), w, marginDb);
}

}  // namespace dmgsim
