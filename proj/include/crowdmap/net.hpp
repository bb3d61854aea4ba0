#pragma once

// Newline-delimited JSON over TCP. One request per line, one response line
// per request, in order, per connection.
//
//   {"type":"ping"}                     -> {"status":"ok","type":"pong"}
//   {"type":"snapshot"}                 -> {"status":"ok","snapshot":{...}}
//   {"type":"ingest","observations":[]} -> {"status":"ok","matched":m,"unmatched":u,
//                                           "updated_landmark_ids":[...],"revision":r}
//   anything else                       -> {"status":"error","error":kind,"message":...}

#include "crowdmap/errors.hpp"
#include "crowdmap/io.hpp"
#include "crowdmap/log.hpp"
#include "crowdmap/map_service.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>

namespace crowdmap {

inline json error_response(std::string_view kind, std::string_view message) {
  return {{"status", "error"}, {"error", kind}, {"message", message}};
}

inline json handle_request(MapService& service, const std::string& line) {
  json request;
  try {
    request = json::parse(line);
  } catch (const json::exception& e) {
    return error_response("parse", e.what());
  }
  if (!request.is_object() || !request.contains("type") || !request["type"].is_string())
    return error_response("parse", "request must be an object with a string 'type'");

  const auto type = request["type"].get<std::string>();
  try {
    if (type == "ping") return {{"status", "ok"}, {"type", "pong"}};
    if (type == "snapshot") return {{"status", "ok"}, {"snapshot", to_json(*service.current())}};
    if (type == "ingest") {
      const auto it = request.find("observations");
      if (it == request.end() || !it->is_array()) return error_response("parse", "missing 'observations' array");
      // Parse everything before touching the map: a bad record rejects the batch.
      std::vector<LandmarkObservation> batch;
      batch.reserve(it->size());
      for (std::size_t i = 0; i < it->size(); ++i) {
        try {
          batch.push_back(observation_from_json((*it)[i]));
        } catch (const ParseError& e) {
          return error_response("parse", "observation " + std::to_string(i) + ": " + e.what());
        }
      }
      if (batch.empty()) return error_response("input", "ingest batch must be nonempty");
      const auto report = service.ingest(batch);
      return {{"status", "ok"},
              {"matched", report.matched},
              {"unmatched", report.unmatched},
              {"updated_landmark_ids", report.updated_landmark_ids},
              {"revision", report.revision}};
    }
    return error_response("unknown_type", "unknown request type '" + type + "'");
  } catch (const IoError& e) {
    return error_response("io", e.what());
  } catch (const Error& e) {
    return error_response("input", e.what());
  }
}

namespace detail {

inline bool send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const auto n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

/// Buffered line reader over a socket.
class LineReader {
 public:
  explicit LineReader(int fd) : fd_(fd) {}

  bool next(std::string& line) {
    for (;;) {
      if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
        line.assign(buffer_, 0, nl);
        buffer_.erase(0, nl + 1);
        return true;
      }
      char chunk[65536];
      const auto n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return false;
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  int fd_;
  std::string buffer_;
};

inline std::pair<std::string, std::string> split_host_port(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw ConfigError("address must be host:port, got '" + addr + "'");
  return {addr.substr(0, colon), addr.substr(colon + 1)};
}

inline addrinfo* resolve(const std::string& addr, bool passive) {
  const auto [host, port] = split_host_port(addr);
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  if (const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), port.c_str(), &hints, &res); rc != 0)
    throw IoError("cannot resolve '" + addr + "': " + ::gai_strerror(rc));
  return res;
}

}  // namespace detail

/// Accepts connections and serves each on its own thread. Requests from all
/// connections funnel into the service's single writer.
class MapServer {
 public:
  MapServer(MapService& service, const std::string& addr) : service_(service) {
    addrinfo* res = detail::resolve(addr, true);
    listen_fd_ = ::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol);
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    const bool ok = listen_fd_ >= 0 && ::bind(listen_fd_, res->ai_addr, res->ai_addrlen) == 0 &&
                    ::listen(listen_fd_, 64) == 0;
    ::freeaddrinfo(res);
    if (!ok) {
      const std::string why = std::strerror(errno);
      if (listen_fd_ >= 0) ::close(listen_fd_);
      throw IoError("cannot listen on '" + addr + "': " + why);
    }
    sockaddr_in bound{};
    socklen_t len = sizeof bound;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
  }

  MapServer(const MapServer&) = delete;
  MapServer& operator=(const MapServer&) = delete;
  ~MapServer() { stop(); }

  /// Actual bound port (useful when binding to port 0).
  std::uint16_t port() const noexcept { return port_; }

  void start() {
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  /// Blocks in the accept loop on the calling thread.
  void run() { accept_loop(); }

  void stop() {
    if (stopping_.exchange(true)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (acceptor_.joinable()) acceptor_.join();
    std::list<Connection> connections;
    {
      std::lock_guard lock(connections_mutex_);
      for (auto& c : connections_) ::shutdown(c.fd, SHUT_RDWR);
      connections.swap(connections_);
    }
    for (auto& c : connections) {
      if (c.thread.joinable()) c.thread.join();
      ::close(c.fd);
    }
  }

 private:
  struct Connection {
    int fd;
    std::shared_ptr<std::atomic<bool>> done;
    std::thread thread;
  };

  // Caller holds connections_mutex_.
  void reap_finished() {
    for (auto it = connections_.begin(); it != connections_.end();) {
      if (*it->done) {
        it->thread.join();
        ::close(it->fd);
        it = connections_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void accept_loop() {
    while (!stopping_) {
      const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) {
        if (errno == EINTR) continue;
        if (!stopping_) log().error("accept failed: {}", std::strerror(errno));
        return;
      }
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      std::lock_guard lock(connections_mutex_);
      if (stopping_) {
        ::close(fd);
        return;
      }
      reap_finished();
      auto done = std::make_shared<std::atomic<bool>>(false);
      connections_.push_back({fd, done, std::thread([this, fd, done] {
                                serve(fd);
                                *done = true;
                              })});
    }
  }

  void serve(int fd) {
    detail::LineReader reader(fd);
    std::string line;
    while (reader.next(line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const json response = handle_request(service_, line);
      if (!detail::send_all(fd, response.dump() + "\n")) break;
    }
  }

  MapService& service_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex connections_mutex_;
  std::list<Connection> connections_;
};

/// Blocking client for one connection.
class MapClient {
 public:
  explicit MapClient(const std::string& addr) {
    addrinfo* res = detail::resolve(addr, false);
    fd_ = ::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol);
    const bool ok = fd_ >= 0 && ::connect(fd_, res->ai_addr, res->ai_addrlen) == 0;
    ::freeaddrinfo(res);
    if (!ok) {
      const std::string why = std::strerror(errno);
      if (fd_ >= 0) ::close(fd_);
      throw IoError("cannot connect to '" + addr + "': " + why);
    }
    reader_ = std::make_unique<detail::LineReader>(fd_);
  }
  MapClient(const MapClient&) = delete;
  MapClient& operator=(const MapClient&) = delete;
  ~MapClient() {
    if (fd_ >= 0) ::close(fd_);
  }

  json request(const json& req) {
    if (!detail::send_all(fd_, req.dump() + "\n")) throw IoError("connection lost while sending");
    std::string line;
    if (!reader_->next(line)) throw IoError("connection closed before a response arrived");
    try {
      return json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(std::string("malformed response: ") + e.what());
    }
  }

  json ping() { return request({{"type", "ping"}}); }

  json ingest(std::span<const LandmarkObservation> batch) {
    json obs = json::array();
    for (const auto& o : batch) obs.push_back(to_json(o));
    return request({{"type", "ingest"}, {"observations", std::move(obs)}});
  }

  /// Returns the parsed map state; throws if the server reports an error.
  MapState snapshot() {
    const json r = request({{"type", "snapshot"}});
    if (r.value("status", "") != "ok") throw IoError("snapshot failed: " + r.dump());
    return map_state_from_json(r.at("snapshot"));
  }

 private:
  int fd_ = -1;
  std::unique_ptr<detail::LineReader> reader_;
};

}  // namespace crowdmap
