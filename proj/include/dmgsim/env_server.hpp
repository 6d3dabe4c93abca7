#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dmgsim/rl_env.hpp"
#include "dmgsim/scenario.hpp"
#include "dmgsim/wire.hpp"

namespace dmgsim {

// ---------------------------------------------------------------------------
// Endpoints: "unix:<path>", "tcp:<host>:<port>" or "<host>:<port>".

struct Endpoint {
  enum class Kind { Unix, Tcp } kind = Kind::Tcp;
  std::string path;
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  std::string str() const {
    return kind == Kind::Unix ? "unix:" + path : host + ":" + std::to_string(port);
  }
};

inline Endpoint parseEndpoint(std::string s) {
  Endpoint e;
  if (s.rfind("unix:", 0) == 0) {
    e.kind = Endpoint::Kind::Unix;
    e.path = s.substr(5);
    if (e.path.empty() || e.path.size() >= sizeof(sockaddr_un{}.sun_path))
      throw SchemaError("endpoint: bad unix socket path");
    return e;
  }
  if (s.rfind("tcp:", 0) == 0) s = s.substr(4);
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw SchemaError("endpoint: expected host:port or unix:<path>");
  if (colon > 0) e.host = s.substr(0, colon);
  const std::string port = s.substr(colon + 1);
  if (port.empty() || port.size() > 5 || port.find_first_not_of("0123456789") != std::string::npos ||
      std::stoul(port) > 65535)
    throw SchemaError("endpoint: bad port '" + port + "'");
  e.port = static_cast<std::uint16_t>(std::stoul(port));
  return e;
}

// ---------------------------------------------------------------------------
// Blocking frame I/O on a connected stream socket.

namespace net {

/// Reads exactly n bytes. Returns false on EOF before the first byte.
inline bool readExact(int fd, char* buf, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, buf + got, n - got, 0);
    if (r == 0) {
      if (got == 0) return false;
      throw FramingError("connection closed mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      throw FramingError(std::string("recv: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

inline void writeAll(int fd, const std::string& bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t r = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw FramingError(std::string("send: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(r);
  }
}

/// Next frame, or nullopt on a clean close between frames.
inline std::optional<wire::Message> readFrame(int fd) {
  char head[4];
  if (!readExact(fd, head, 4)) return std::nullopt;
  const std::uint32_t n = wire::getLength(reinterpret_cast<const unsigned char*>(head));
  if (n > wire::kMaxFrameBytes) throw FramingError("frame length " + std::to_string(n) + " exceeds limit");
  std::string body(n, '\0');
  if (n > 0 && !readExact(fd, body.data(), n)) throw FramingError("connection closed mid-frame");
  return wire::decodeBody(body);
}

inline void writeFrame(int fd, const wire::Message& m) { writeAll(fd, wire::encodeMessage(m)); }

inline int connectTo(const Endpoint& e) {
  if (e.kind == Endpoint::Kind::Unix) {
    const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    std::strncpy(addr.sun_path, e.path.c_str(), sizeof addr.sun_path - 1);
    if (fd < 0 || ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      if (fd >= 0) ::close(fd);
      throw ProtocolError("connect " + e.str() + ": " + std::strerror(errno));
    }
    return fd;
  }
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(e.host.c_str(), std::to_string(e.port).c_str(), &hints, &res) != 0)
    throw ProtocolError("cannot resolve " + e.host);
  int fd = -1;
  for (auto* p = res; p; p = p->ai_next) {
    fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw ProtocolError("connect " + e.str() + ": " + std::strerror(errno));
  return fd;
}

}  // namespace net

// ---------------------------------------------------------------------------
// Session: one environment per connection, transport independent.

class EnvSession {
public:
  explicit EnvSession(Scenario sc) : env_(std::move(sc)) {}

  struct Reply {
    wire::Message message;
    bool close = false;
  };

  Reply handle(const wire::Message& m) {
    try {
      wire::checkVersion(m.protocolVersion);
    } catch (const VersionError& e) {
      return {wire::errorMessage(e.kind(), e.what()), true};
    }
    try {
      switch (m.type) {
        case wire::MessageType::Hello:
          return {hello(), false};
        case wire::MessageType::Reset:
          return {reset(m.payload), false};
        case wire::MessageType::Step:
          return {step(m.payload), false};
        default:
          throw ProtocolError(std::string("unexpected client message ") + wire::toString(m.type));
      }
    } catch (const Error& e) {
      return {wire::errorMessage(e.kind(), e.what()), false};
    } catch (const std::exception& e) {
      return {wire::errorMessage("InternalError", e.what()), false};
    }
  }

  const Environment& environment() const { return env_; }

private:
  wire::Message hello() const {
    std::vector<FlowId> ids;
    for (const auto& f : env_.scenario().flows) ids.push_back(f.flowId);
    std::sort(ids.begin(), ids.end());
    return {wire::kProtocolVersion, wire::MessageType::Hello,
            {{"server", "dmgsim"},
             {"layout", observationLayout(ids)},
             {"biDuration", env_.scenario().bi.biDuration},
             {"biCount", env_.scenario().biCount()}}};
  }

  wire::Message reset(const nlohmann::json& p) {
    if (!p.is_object()) throw MalformedAction("RESET payload: expected an object");
    std::optional<std::uint64_t> seed;
    if (auto it = p.find("seed"); it != p.end() && !it->is_null()) {
      if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0))
        throw MalformedAction("seed: expected a non-negative integer");
      seed = it->get<std::uint64_t>();
    }
    if (auto it = p.find("scenario"); it != p.end() && !it->is_null()) env_.setScenario(loadScenario(*it));
    if (auto it = p.find("weights"); it != p.end() && !it->is_null()) env_.setWeights(rewardWeightsFromJson(*it));
    const Observation o = env_.reset(seed);
    const bool done = !env_.active();
    return {wire::kProtocolVersion, done ? wire::MessageType::Done : wire::MessageType::Obs,
            {{"observation", o.toJson()}, {"reward", 0.0}, {"done", done}, {"info", nlohmann::json::object()}}};
  }

  wire::Message step(const nlohmann::json& p) {
    if (!p.is_object()) throw MalformedAction("STEP payload: expected an object");
    const auto it = p.find("action");
    const StepResult r = env_.step(it == p.end() ? nlohmann::json() : *it);
    return {wire::kProtocolVersion, r.done ? wire::MessageType::Done : wire::MessageType::Obs,
            {{"observation", r.observation.toJson()}, {"reward", r.reward}, {"done", r.done}, {"info", r.info}}};
  }

  Environment env_;
};

// ---------------------------------------------------------------------------
// Server

/// Accepts connections on one endpoint; each connection gets its own
/// session on its own thread.
class EnvServer {
public:
  EnvServer(Scenario sc, const std::string& endpoint) : sc_(std::move(sc)), ep_(parseEndpoint(endpoint)) {}
  ~EnvServer() { stop(); }

  EnvServer(const EnvServer&) = delete;
  EnvServer& operator=(const EnvServer&) = delete;

  /// Binds and listens. For TCP port 0 the kernel picks a port.
  void bind() {
    if (ep_.kind == Endpoint::Kind::Unix) {
      listenFd_ = ::socket(AF_UNIX, SOCK_STREAM, 0);
      if (listenFd_ < 0) fail("socket");
      ::unlink(ep_.path.c_str());
      sockaddr_un addr{};
      addr.sun_family = AF_UNIX;
      std::strncpy(addr.sun_path, ep_.path.c_str(), sizeof addr.sun_path - 1);
      if (::bind(listenFd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) fail("bind");
    } else {
      listenFd_ = ::socket(AF_INET, SOCK_STREAM, 0);
      if (listenFd_ < 0) fail("socket");
      const int one = 1;
      ::setsockopt(listenFd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      sockaddr_in addr{};
      addr.sin_family = AF_INET;
      addr.sin_port = htons(ep_.port);
      if (::inet_pton(AF_INET, ep_.host == "localhost" ? "127.0.0.1" : ep_.host.c_str(), &addr.sin_addr) != 1)
        throw SchemaError("endpoint: host must be an IPv4 address");
      if (::bind(listenFd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) fail("bind");
      socklen_t len = sizeof addr;
      ::getsockname(listenFd_, reinterpret_cast<sockaddr*>(&addr), &len);
      ep_.port = ntohs(addr.sin_port);
    }
    if (::listen(listenFd_, 16) != 0) fail("listen");
  }

  const Endpoint& endpoint() const { return ep_; }

  /// Serves until stop() is called.
  void serve() {
    if (listenFd_ < 0) bind();
    while (!stopping_) {
      pollfd p{listenFd_, POLLIN, 0};
      const int r = ::poll(&p, 1, 100);
      if (r <= 0) continue;
      const int fd = ::accept(listenFd_, nullptr, nullptr);
      if (fd < 0) continue;
      std::lock_guard lock(mu_);
      clients_.push_back(fd);
      threads_.emplace_back([this, fd] { connection(fd); });
    }
  }

  /// Serves on a background thread.
  void start() {
    if (listenFd_ < 0) bind();
    acceptor_ = std::thread([this] { serve(); });
  }

  void stop() {
    stopping_ = true;
    if (acceptor_.joinable()) acceptor_.join();
    std::vector<std::thread> threads;
    {
      std::lock_guard lock(mu_);
      for (int fd : clients_) ::shutdown(fd, SHUT_RDWR);
      threads.swap(threads_);
    }
    for (auto& t : threads)
      if (t.joinable()) t.join();
    if (listenFd_ >= 0) {
      ::close(listenFd_);
      listenFd_ = -1;
      if (ep_.kind == Endpoint::Kind::Unix) ::unlink(ep_.path.c_str());
    }
  }

private:
  [[noreturn]] void fail(const char* what) {
    const std::string msg = std::string(what) + " " + ep_.str() + ": " + std::strerror(errno);
    if (listenFd_ >= 0) ::close(listenFd_);
    listenFd_ = -1;
    throw ProtocolError(msg);
  }

  void connection(int fd) {
    EnvSession session(sc_);
    try {
      while (true) {
        std::optional<wire::Message> m;
        try {
          m = net::readFrame(fd);
        } catch (const FramingError& e) {
          try {
            net::writeFrame(fd, wire::errorMessage(e.kind(), e.what()));
          } catch (const Error&) {
          }
          break;
        }
        if (!m) break;
        const auto reply = session.handle(*m);
        net::writeFrame(fd, reply.message);
        if (reply.close) break;
      }
    } catch (const Error&) {
      // peer went away
    }
    std::lock_guard lock(mu_);
    std::erase(clients_, fd);
    ::close(fd);
  }

  Scenario sc_;
  Endpoint ep_;
  int listenFd_ = -1;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<int> clients_;
  std::vector<std::thread> threads_;
};

}  // namespace dmgsim
