#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace dmgsim {

/// Virtual time and durations, in integer microseconds.
using Micros = std::int64_t;
using Aid = std::uint16_t;
using FlowId = std::uint32_t;
using AllocId = std::uint32_t;
using McsIndex = int;

inline constexpr Micros kMicrosPerSecond = 1'000'000;

// ---------------------------------------------------------------------------
// Errors. Every failure surfaced by the library derives from Error so callers
// (CLI, env server) can map it to a diagnostic with a stable kind string.

class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

#define DMGSIM_DEFINE_ERROR(Name)                                              \
  class Name : public Error {                                                  \
  public:                                                                      \
    explicit Name(const std::string& what) : Error(#Name, what) {}             \
  }

DMGSIM_DEFINE_ERROR(OverlapError);
DMGSIM_DEFINE_ERROR(BoundsError);
DMGSIM_DEFINE_ERROR(CapacityError);
DMGSIM_DEFINE_ERROR(DegenerateGeometry);
DMGSIM_DEFINE_ERROR(MalformedTspec);
DMGSIM_DEFINE_ERROR(SchemaError);
DMGSIM_DEFINE_ERROR(ReferenceError);
DMGSIM_DEFINE_ERROR(ProtocolError);
DMGSIM_DEFINE_ERROR(MalformedAction);
DMGSIM_DEFINE_ERROR(FramingError);
DMGSIM_DEFINE_ERROR(VersionError);

#undef DMGSIM_DEFINE_ERROR

// ---------------------------------------------------------------------------
// Randomness. The engine is std::mt19937_64 (fully specified by the standard);
// the transforms below are written out so traces are bit-identical across
// standard library implementations, which std::*_distribution is not.

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Random stream purposes. A stream is keyed by (seed, flowId, purpose) so that
/// adding a flow never perturbs the draws of another.
enum class StreamPurpose : std::uint32_t {
  Arrivals = 1,
  FrameSize = 2,
  FrameJitter = 3,
  Backoff = 4,
};

inline std::uint64_t streamSeed(std::uint64_t seed, std::uint64_t flowId,
                                StreamPurpose purpose) noexcept {
  std::uint64_t key = (flowId << 8) ^ static_cast<std::uint64_t>(purpose);
  return splitmix64(seed ^ splitmix64(key));
}

class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}
  Rng(std::uint64_t seed, std::uint64_t flowId, StreamPurpose purpose)
      : engine_(streamSeed(seed, flowId, purpose)) {}

  std::uint64_t nextU64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound], inclusive (rejection sampling, unbiased).
  std::uint64_t uniformInt(std::uint64_t bound) {
    if (bound == std::numeric_limits<std::uint64_t>::max()) return engine_();
    const std::uint64_t range = bound + 1;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % range;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % range;
  }

  double exponential(double mean) { return -mean * std::log1p(-uniform()); }

  /// Standard normal via Box-Muller; the spare deviate is cached.
  double normal() {
    if (hasSpare_) {
      hasSpare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    hasSpare_ = true;
    return r * std::cos(theta);
  }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool hasSpare_ = false;
};

// ---------------------------------------------------------------------------

inline double dbToLinear(double db) { return std::pow(10.0, db / 10.0); }
inline double linearToDb(double lin) { return 10.0 * std::log10(lin); }

/// Airtime in whole microseconds for a payload at a PHY rate, rounded up.
inline Micros payloadAirtime(std::int64_t bits, double phyRate) {
  if (bits <= 0) return 0;
  const double us = static_cast<double>(bits) * 1e6 / phyRate;
  return static_cast<Micros>(std::ceil(us - 1e-9));
}

}  // namespace dmgsim
