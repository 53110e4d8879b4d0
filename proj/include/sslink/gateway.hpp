#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sslink/error.hpp"
#include "sslink/session.hpp"

namespace sslink::gateway {

using Json = nlohmann::ordered_json;

inline constexpr int kProtocolVersion = 1;

// Server to console. Key order is part of the protocol.

inline std::string hello_line(const sim::SessionConfig& cfg) {
  Json j;
  j["kind"] = "hello";
  j["ts"] = 0.0;
  j["version"] = kProtocolVersion;
  j["nodes"] = {cfg.node_a, cfg.node_b};
  j["channels"] = cfg.plan.channel_count;
  return j.dump();
}

inline std::string chat_text_line(double ts, std::uint8_t from, std::uint8_t to, const std::string& text) {
  Json j;
  j["kind"] = "chat_text";
  j["ts"] = ts;
  j["from"] = from;
  j["to"] = to;
  j["text"] = text;
  return j.dump();
}

inline std::string voice_marker_line(double ts, std::uint8_t from, std::uint8_t to, std::size_t bytes) {
  Json j;
  j["kind"] = "voice_marker";
  j["ts"] = ts;
  j["from"] = from;
  j["to"] = to;
  j["bytes"] = bytes;
  return j.dump();
}

inline std::string link_event_line(const link::TraceEvent& e) {
  Json j;
  j["kind"] = "link_event";
  j["ts"] = e.time;
  j["node"] = e.node;
  j["event"] = e.event;
  j["old_phase"] = link::phase_name(e.old_phase);
  j["new_phase"] = link::phase_name(e.new_phase);
  j["channel"] = e.channel;
  return j.dump();
}

inline std::string spectrum_line(double ts, const std::vector<double>& channel_dbm, std::vector<int> link_channels,
                                 const phy::SweepJammer& jammer) {
  Json j;
  j["kind"] = "spectrum_snapshot";
  j["ts"] = ts;
  j["channel_dbm"] = channel_dbm;
  j["link_channels"] = std::move(link_channels);
  j["jammer"] = {{"enabled", jammer.enabled}, {"dwell_s", jammer.dwell_s}, {"power_dbm", jammer.power_dbm}};
  return j.dump();
}

inline std::string jammer_line(double ts, const phy::SweepJammer& jammer) {
  Json j;
  j["kind"] = "jammer_command";
  j["ts"] = ts;
  j["enabled"] = jammer.enabled;
  j["dwell_s"] = jammer.dwell_s;
  j["power_dbm"] = jammer.power_dbm;
  return j.dump();
}

inline std::string error_line(double ts, const std::string& message) {
  Json j;
  j["kind"] = "error";
  j["ts"] = ts;
  j["message"] = message;
  return j.dump();
}

// Console to server.

struct ChatCommand {
  std::uint8_t from = 0;
  std::string text;
};

struct VoiceCommand {
  std::uint8_t from = 0;
  std::size_t bytes = 4;
};

struct JammerCommand {
  std::optional<bool> enabled;
  std::optional<double> dwell_s;
  std::optional<double> power_dbm;
};

struct HelloCommand {};

using ClientCommand = std::variant<ChatCommand, VoiceCommand, JammerCommand, HelloCommand>;

inline ClientCommand parse_client_line(const std::string& line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::exception& e) {
    throw Error(Errc::protocol, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
    throw Error(Errc::protocol, "message must be an object with a string \"kind\"");
  const auto kind = j["kind"].get<std::string>();
  auto address = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_number_integer()) throw Error(Errc::protocol, std::string("missing integer \"") + key + "\"");
    const auto v = j[key].get<long>();
    if (v < 1 || v > 63) throw Error(Errc::protocol, std::string("\"") + key + "\" outside 1..63");
    return static_cast<std::uint8_t>(v);
  };
  try {
    if (kind == "hello") return HelloCommand{};
    if (kind == "chat_text") {
      if (!j.contains("text") || !j["text"].is_string()) throw Error(Errc::protocol, "missing string \"text\"");
      return ChatCommand{address("from"), j["text"].get<std::string>()};
    }
    if (kind == "voice_marker") {
      VoiceCommand v{address("from"), 4};
      if (j.contains("bytes")) v.bytes = j["bytes"].get<std::size_t>();
      return v;
    }
    if (kind == "jammer_command") {
      JammerCommand c;
      if (j.contains("enabled")) c.enabled = j["enabled"].get<bool>();
      if (j.contains("dwell_s")) c.dwell_s = j["dwell_s"].get<double>();
      if (j.contains("power_dbm")) c.power_dbm = j["power_dbm"].get<double>();
      if (c.dwell_s && *c.dwell_s <= 0.0) throw Error(Errc::protocol, "dwell_s must be positive");
      return c;
    }
  } catch (const Json::exception& e) {
    throw Error(Errc::protocol, std::string("bad field: ") + e.what());
  }
  throw Error(Errc::protocol, "unknown kind \"" + kind + "\"");
}

struct GatewayOptions {
  double pace = 1.0;                // simulated seconds per wall second; 0 runs flat out
  double step_s = 0.02;             // simulated time advanced per loop
  double snapshot_interval_s = 0.5;
  std::string bind_address = "127.0.0.1";
};

/// Hosts one live Session and relays it to any number of console
/// connections as newline-delimited JSON. All session mutations happen on
/// the simulation thread; readers only enqueue.
class Gateway {
 public:
  Gateway(sim::SessionConfig cfg, GatewayOptions opt = {}) : cfg_(std::move(cfg)), opt_(opt) {}
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;
  ~Gateway() { stop(); }

  /// Binds and starts serving. Port 0 picks a free port.
  void start(std::uint16_t port) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw Error(Errc::io, std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, opt_.bind_address.c_str(), &addr.sin_addr) != 1)
      throw Error(Errc::config, "bad bind address " + opt_.bind_address);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
      const int e = errno;
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw Error(Errc::io, "port " + std::to_string(port) + ": " + std::strerror(e));
    }
    ::listen(listen_fd_, 8);
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);

    session_ = std::make_unique<sim::Session>(cfg_);
    session_->on_trace = [this](const link::TraceEvent& e) { broadcast(link_event_line(e)); };
    session_->on_chat = [this](const sim::ChatMessage& m) { broadcast(chat_text_line(m.time, m.from, m.to, m.text)); };
    session_->on_voice = [this](double t, std::uint8_t from, std::uint8_t to, std::size_t bytes) {
      broadcast(voice_marker_line(t, from, to, bytes));
    };
    session_->start();
    running_ = true;
    sim_thread_ = std::thread([this] { simulate(); });
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  void stop() {
    if (!running_.exchange(false)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (accept_thread_.joinable()) accept_thread_.join();
    {
      std::lock_guard lk(conn_mu_);
      for (auto& c : conns_) ::shutdown(c->fd, SHUT_RDWR);
    }
    for (auto& t : readers_)
      if (t.joinable()) t.join();
    if (sim_thread_.joinable()) sim_thread_.join();
    std::lock_guard lk(conn_mu_);
    for (auto& c : conns_) ::close(c->fd);
    conns_.clear();
  }

  std::uint16_t port() const noexcept { return port_; }
  bool running() const noexcept { return running_; }
  /// The session ended by handshake failure.
  bool failed() const noexcept { return failed_; }

 private:
  struct Connection {
    int fd = -1;
    std::mutex write_mu;
    bool alive = true;
  };

  static bool send_line(Connection& c, const std::string& line) {
    std::lock_guard lk(c.write_mu);
    if (!c.alive) return false;
    const std::string out = line + '\n';
    std::size_t sent = 0;
    while (sent < out.size()) {
      const auto n = ::send(c.fd, out.data() + sent, out.size() - sent, MSG_NOSIGNAL);
      if (n <= 0) {
        c.alive = false;
        return false;
      }
      sent += static_cast<std::size_t>(n);
    }
    return true;
  }

  void broadcast(const std::string& line) {
    std::lock_guard lk(conn_mu_);
    for (auto& c : conns_) send_line(*c, line);
  }

  void accept_loop() {
    while (running_) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (!running_) break;
        continue;
      }
      auto c = std::make_shared<Connection>();
      c->fd = fd;
      send_line(*c, hello_line(cfg_));
      {
        std::lock_guard lk(conn_mu_);
        conns_.push_back(c);
      }
      readers_.emplace_back([this, c] { read_loop(c); });
    }
  }

  void read_loop(const std::shared_ptr<Connection>& c) {
    std::string buf;
    char chunk[4096];
    while (running_) {
      const auto n = ::recv(c->fd, chunk, sizeof chunk, 0);
      if (n <= 0) break;
      buf.append(chunk, static_cast<std::size_t>(n));
      std::size_t nl;
      while ((nl = buf.find('\n')) != std::string::npos) {
        std::string line = buf.substr(0, nl);
        buf.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        try {
          auto cmd = parse_client_line(line);
          std::lock_guard lk(inbox_mu_);
          inbox_.push_back({c, std::move(cmd)});
        } catch (const Error& e) {
          send_line(*c, error_line(sim_time_.load(), e.what()));
        }
      }
    }
    std::lock_guard lk(c->write_mu);
    c->alive = false;
  }

  void apply(const std::shared_ptr<Connection>& from, const ClientCommand& cmd) {
    auto& s = *session_;
    const double now = s.now();
    try {
      if (const auto* chat = std::get_if<ChatCommand>(&cmd)) {
        s.type_text(chat->from, chat->text, now);
      } else if (const auto* v = std::get_if<VoiceCommand>(&cmd)) {
        s.send_voice(v->from, v->bytes, now);
      } else if (const auto* j = std::get_if<JammerCommand>(&cmd)) {
        auto jam = s.jammer();
        if (jam.order.empty()) jam.order = phy::SweepJammer::ascending(cfg_.plan.channel_count);
        if (j->dwell_s) jam.dwell_s = *j->dwell_s;
        if (j->power_dbm) jam.power_dbm = *j->power_dbm;
        if (j->enabled) {
          if (*j->enabled && !jam.enabled) jam.start_s = now;
          jam.enabled = *j->enabled;
        }
        jam.validate(cfg_.plan);
        s.set_jammer(jam, now);
        broadcast(jammer_line(now, jam));
      }
    } catch (const Error& e) {
      send_line(*from, error_line(now, e.what()));
    }
  }

  void simulate() {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    double next_snapshot = 0.0;
    while (running_) {
      std::deque<std::pair<std::shared_ptr<Connection>, ClientCommand>> work;
      {
        std::lock_guard lk(inbox_mu_);
        work.swap(inbox_);
      }
      for (auto& [c, cmd] : work) apply(c, cmd);

      const double target = session_->now() + opt_.step_s;
      session_->run_until(target);
      sim_time_ = session_->now();
      if (session_->handshake_failed()) failed_ = true;
      if (session_->now() >= next_snapshot) {
        const auto& a = session_->controller(cfg_.node_a).state();
        const auto& b = session_->controller(cfg_.node_b).state();
        broadcast(spectrum_line(session_->now(), session_->spectrum_snapshot(), {a.active_channel, b.active_channel},
                                session_->jammer()));
        next_snapshot = session_->now() + opt_.snapshot_interval_s;
      }
      if (opt_.pace > 0.0) {
        const auto due = t0 + std::chrono::duration<double>(session_->now() / opt_.pace);
        std::this_thread::sleep_until(std::chrono::time_point_cast<clock::duration>(due));
      } else {
        std::this_thread::yield();
      }
    }
  }

  sim::SessionConfig cfg_;
  GatewayOptions opt_;
  std::unique_ptr<sim::Session> session_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::atomic<bool> failed_{false};
  std::atomic<double> sim_time_{0.0};

  std::thread sim_thread_;
  std::thread accept_thread_;
  std::vector<std::thread> readers_;

  std::mutex conn_mu_;
  std::vector<std::shared_ptr<Connection>> conns_;

  std::mutex inbox_mu_;
  std::deque<std::pair<std::shared_ptr<Connection>, ClientCommand>> inbox_;
};

}  // namespace sslink::gateway
