#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "dmgsim/common.hpp"

namespace dmgsim::wire {

inline constexpr const char* kProtocolVersion = "1.0";
inline constexpr std::uint32_t kMaxFrameBytes = 64u << 20;

enum class MessageType { Hello, Reset, Step, Obs, Done, Error };

inline const char* toString(MessageType t) {
  switch (t) {
    case MessageType::Hello: return "HELLO";
    case MessageType::Reset: return "RESET";
    case MessageType::Step: return "STEP";
    case MessageType::Obs: return "OBS";
    case MessageType::Done: return "DONE";
    case MessageType::Error: return "ERROR";
  }
  return "?";
}

inline std::optional<MessageType> messageTypeFromString(std::string_view s) {
  for (auto t : {MessageType::Hello, MessageType::Reset, MessageType::Step, MessageType::Obs,
                 MessageType::Done, MessageType::Error})
    if (s == toString(t)) return t;
  return std::nullopt;
}

struct Message {
  std::string protocolVersion = kProtocolVersion;
  MessageType type = MessageType::Hello;
  nlohmann::json payload = nlohmann::json::object();

  bool operator==(const Message&) const = default;
};

/// Major component of a "major.minor" version string.
inline std::optional<int> majorVersion(const std::string& v) {
  const auto dot = v.find('.');
  const std::string head = v.substr(0, dot);
  if (head.empty() || head.size() > 6) return std::nullopt;
  int major = 0;
  for (char c : head) {
    if (c < '0' || c > '9') return std::nullopt;
    major = major * 10 + (c - '0');
  }
  return major;
}

/// Throws VersionError unless `v` shares our major version.
inline void checkVersion(const std::string& v) {
  const auto theirs = majorVersion(v);
  if (!theirs || theirs != majorVersion(kProtocolVersion))
    throw VersionError("protocol version " + v + " is not compatible with " + kProtocolVersion);
}

inline void putLength(std::string& out, std::uint32_t n) {
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
}

inline std::uint32_t getLength(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

inline std::string encodeBody(const Message& m) {
  const nlohmann::json body = {
      {"protocolVersion", m.protocolVersion}, {"type", toString(m.type)}, {"payload", m.payload}};
  return body.dump();
}

/// Length prefix plus body.
inline std::string encodeMessage(const Message& m) {
  const std::string body = encodeBody(m);
  if (body.size() > kMaxFrameBytes) throw FramingError("message exceeds frame limit");
  std::string out;
  out.reserve(body.size() + 4);
  putLength(out, static_cast<std::uint32_t>(body.size()));
  out += body;
  return out;
}

/// Parses a frame body. Unknown top-level fields are ignored.
inline Message decodeBody(std::string_view body) {
  nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw FramingError("frame body is not a JSON object");
  Message m;
  auto v = j.find("protocolVersion");
  auto t = j.find("type");
  if (v == j.end() || !v->is_string()) throw FramingError("missing protocolVersion");
  if (t == j.end() || !t->is_string()) throw FramingError("missing type");
  m.protocolVersion = v->get<std::string>();
  const auto type = messageTypeFromString(t->get<std::string>());
  if (!type) throw FramingError("unknown message type " + t->get<std::string>());
  m.type = *type;
  if (auto p = j.find("payload"); p != j.end() && !p->is_null()) m.payload = *p;
  return m;
}

/// Decodes exactly one complete frame.
inline Message decodeMessage(std::string_view bytes) {
  if (bytes.size() < 4) throw FramingError("truncated length prefix");
  const std::uint32_t n = getLength(reinterpret_cast<const unsigned char*>(bytes.data()));
  if (n > kMaxFrameBytes) throw FramingError("frame length " + std::to_string(n) + " exceeds limit");
  if (bytes.size() - 4 != n)
    throw FramingError("frame length " + std::to_string(n) + " does not match " +
                       std::to_string(bytes.size() - 4) + " body bytes");
  return decodeBody(bytes.substr(4));
}

inline Message errorMessage(const std::string& kind, const std::string& what) {
  return {kProtocolVersion, MessageType::Error, {{"error", kind}, {"message", what}}};
}

}  // namespace dmgsim::wire
