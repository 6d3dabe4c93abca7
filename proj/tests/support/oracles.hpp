#pragma once

// Reference computations written independently of the library, for checking it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace oracle {

constexpr double kPi = 3.141592653589793;
constexpr double kC = 299792458.0;

/// Log-distance loss in dB, d0 = 1 m.
inline double pathLoss(double d, double freq, double eta) {
  return 20.0 * std::log10(4.0 * kPi * d * freq / kC) + 10.0 * (eta - 2.0) * std::log10(d);
}

/// Sector of a station at (sx, sy), boresight b, n sectors, looking at (tx, ty).
inline int sector(double sx, double sy, double b, int n, double tx, double ty) {
  const double twoPi = 2.0 * kPi;
  double a = std::atan2(ty - sy, tx - sx) - b;
  while (a < 0) a += twoPi;
  while (a >= twoPi) a -= twoPi;
  int k = static_cast<int>(a / (twoPi / n));
  return k >= n ? n - 1 : k;
}

struct Node {
  double x, y;
  double txDbm = 10.0;
  double nfDb = 10.0;
  double main = 15.0;
  double side = -10.0;
  int n = 8;
  double boresight = 0.0;
};

inline double gainToward(const Node& s, int usingSector, const Node& other) {
  return sector(s.x, s.y, s.boresight, s.n, other.x, other.y) == usingSector ? s.main : s.side;
}

/// Received power at rx (listening on rxSector) from tx (sending on txSector), dBm.
inline double rxPower(const Node& tx, int txSector, const Node& rx, int rxSector, double eta = 2.5) {
  const double d = std::hypot(tx.x - rx.x, tx.y - rx.y);
  return tx.txDbm + gainToward(tx, txSector, rx) + gainToward(rx, rxSector, tx) - pathLoss(d, 60e9, eta);
}

inline double noiseDbm(const Node& rx, double bw = 2.16e9) { return -174.0 + 10.0 * std::log10(bw) + rx.nfDb; }

/// SINR in dB of tx->rx with the listed (transmitter, its sector) pairs also active.
inline double sinrDb(const Node& tx, const Node& rx, const std::vector<std::pair<Node, int>>& others,
                     double eta = 2.5) {
  const int ts = sector(tx.x, tx.y, tx.boresight, tx.n, rx.x, rx.y);
  const int rs = sector(rx.x, rx.y, rx.boresight, rx.n, tx.x, tx.y);
  double denom = std::pow(10.0, noiseDbm(rx) / 10.0);
  for (const auto& [o, os] : others) denom += std::pow(10.0, rxPower(o, os, rx, rs, eta) / 10.0);
  return 10.0 * std::log10(std::pow(10.0, rxPower(tx, ts, rx, rs, eta) / 10.0) / denom);
}

/// Default MCS thresholds: 1, 4, ..., 22 dB for indices 1..8.
inline double defaultThreshold(int mcs) { return 1.0 + 3.0 * (mcs - 1); }

/// Highest default-table index whose threshold + margin <= sinr; 0 for outage.
inline int defaultMcs(double sinr, double margin) {
  int best = 0;
  for (int i = 1; i <= 8; ++i)
    if (defaultThreshold(i) + margin <= sinr) best = i;
  return best;
}

/// Jain's index.
inline double jain(const std::vector<double>& x) {
  double s = 0, q = 0;
  for (double v : x) {
    s += v;
    q += v * v;
  }
  return q == 0 ? 1.0 : s * s / (x.size() * q);
}

/// CBR inter-arrival in microseconds.
inline double cbrInterval(double bytes, double rate) { return bytes * 8.0 / rate * 1e6; }

/// Lone saturated contender: payload / (payload + overhead + mean backoff).
inline double cbapEfficiency(double payloadUs, double overheadUs, int cwMin, double slotUs) {
  return payloadUs / (payloadUs + overheadUs + cwMin / 2.0 * slotUs);
}

/// Busy interval used by the brute-force placement oracle.
struct Busy {
  std::int64_t start, end;
};

/// Earliest integer start in [ws, we - dur] that keeps `guard` clear of every
/// busy interval, found by trying every start in turn.
inline std::optional<std::int64_t> earliestStart(const std::vector<Busy>& busy, std::int64_t ws,
                                                 std::int64_t we, std::int64_t dur, std::int64_t guard) {
  for (std::int64_t c = ws; c + dur <= we; ++c) {
    bool clear = true;
    for (const auto& b : busy)
      if (!(c >= b.end + guard || c + dur <= b.start - guard)) {
        clear = false;
        break;
      }
    if (clear) return c;
  }
  return std::nullopt;
}

/// Per-window placement of a periodic request by exhaustive start enumeration.
/// Returns the starts, or nullopt if some window cannot host `dur`.
inline std::optional<std::vector<std::int64_t>> placeExhaustive(std::vector<Busy> busy, std::int64_t bi,
                                                                std::int64_t bhi, std::int64_t guard,
                                                                std::int64_t period, std::int64_t dur) {
  std::vector<std::int64_t> starts;
  for (std::int64_t k = 0; k < bi / period; ++k) {
    const std::int64_t ws = std::max(k * period, bhi);
    const std::int64_t we = std::min((k + 1) * period, bi);
    const auto c = earliestStart(busy, ws, we, dur, guard);
    if (!c) return std::nullopt;
    starts.push_back(*c);
    busy.push_back({*c, *c + dur});
  }
  return starts;
}

}  // namespace oracle
