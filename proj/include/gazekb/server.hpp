#pragma once

// Live session server. Clients speak the wire protocol either as
// newline-delimited JSON over raw TCP or as one JSON message per WebSocket
// text frame (browsers). The first message on a connection is the hello
// handshake naming the session token and the connection's role:
//
//   frames  sends frames, points and clicks
//   events  receives selection/feedback/state records
//   both    does both
//
// Each session accepts one producer and one consumer. Input messages are
// applied to the session under its lock in arrival order; outbound records go
// through a bounded per-connection queue that drops the oldest record when
// full, so a slow consumer never stalls frame ingestion.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <openssl/evp.h>
#include <openssl/sha.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "json.hpp"

#include "gazekb/gateway.hpp"
#include "gazekb/session.hpp"

namespace gazekb {

struct ServerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8765;  // 0 picks a free port
  EngineConfig engine;
  LayoutSpec layout = default_layout();
  std::u32string default_target{kTaskSentence};
  std::filesystem::path log_dir = "logs";
  std::optional<std::uint64_t> seed;  // recorded in each session header
  std::size_t queue_capacity = 1024;
  std::size_t max_message_bytes = 1 << 20;

  void validate() const {
    engine.validate();
    if (port < 0 || port > 65535) throw ServerError("port must be in 0..65535");
    if (queue_capacity == 0) throw ServerError("queue capacity must be positive");
    if (const auto v = validate_layout(layout); !v.empty()) throw ServerError("invalid layout: " + v.front().detail);
  }
};

inline std::pair<std::string, int> parse_listen(std::string_view s) {
  const auto colon = s.rfind(':');
  if (colon == std::string_view::npos) throw ServerError("listen address must be host:port");
  std::string host(s.substr(0, colon));
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(std::string(s.substr(colon + 1)), &used);
    if (used != s.size() - colon - 1) throw std::invalid_argument("port");
  } catch (const std::exception&) {
    throw ServerError("invalid port in listen address: " + std::string(s));
  }
  if (port < 0 || port > 65535) throw ServerError("port out of range: " + std::to_string(port));
  if (host.empty()) host = "0.0.0.0";
  return {host, port};
}

namespace net {

inline std::string base64(const unsigned char* data, std::size_t n) {
  std::string out(4 * ((n + 2) / 3), '\0');
  const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data, static_cast<int>(n));
  out.resize(static_cast<std::size_t>(len));
  return out;
}

inline std::string websocket_accept_key(std::string_view client_key) {
  const std::string s = std::string(client_key) + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(s.data()), s.size(), digest);
  return base64(digest, SHA_DIGEST_LENGTH);
}

inline bool send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

inline std::string websocket_frame(std::string_view payload, std::uint8_t opcode = 0x1) {
  std::string f;
  f.push_back(static_cast<char>(0x80 | opcode));
  const std::size_t n = payload.size();
  if (n < 126) {
    f.push_back(static_cast<char>(n));
  } else if (n <= 0xFFFF) {
    f.push_back(126);
    f.push_back(static_cast<char>(n >> 8));
    f.push_back(static_cast<char>(n & 0xFF));
  } else {
    f.push_back(127);
    for (int i = 7; i >= 0; --i) f.push_back(static_cast<char>((static_cast<std::uint64_t>(n) >> (8 * i)) & 0xFF));
  }
  f.append(payload);
  return f;
}

// Message-oriented view of a socket: JSON lines or WebSocket text frames.
class Channel {
 public:
  Channel(int fd, std::size_t max_bytes) : fd_(fd), max_bytes_(max_bytes) {}
  Channel(const Channel&) = delete;
  Channel& operator=(const Channel&) = delete;
  ~Channel() {
    if (fd_ >= 0) ::close(fd_);
  }

  // Reads the first bytes to tell a WebSocket upgrade from a raw line client.
  bool open() {
    while (buffer_.size() < 4 && buffer_.find('\n') == std::string::npos)
      if (!fill()) return !buffer_.empty();
    if (buffer_.rfind("GET ", 0) != 0) return true;
    websocket_ = true;
    std::size_t end;
    while ((end = buffer_.find("\r\n\r\n")) == std::string::npos) {
      if (buffer_.size() > 16384 || !fill()) return false;
    }
    const std::string request = buffer_.substr(0, end);
    buffer_.erase(0, end + 4);
    std::string key;
    std::istringstream lines(request);
    for (std::string line; std::getline(lines, line);) {
      const auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      std::string name = line.substr(0, colon);
      for (auto& c : name) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      if (name != "sec-websocket-key") continue;
      key = line.substr(colon + 1);
      key.erase(0, key.find_first_not_of(" \t"));
      key.erase(key.find_last_not_of(" \t\r") + 1);
    }
    if (key.empty()) {
      send_raw("HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
      return false;
    }
    return send_raw("HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                    "Sec-WebSocket-Accept: " +
                    websocket_accept_key(key) + "\r\n\r\n");
  }

  bool websocket() const noexcept { return websocket_; }

  // Next inbound message; nullopt on orderly or abrupt close. Oversized
  // messages come back as an empty string after being discarded.
  std::optional<std::string> receive() { return websocket_ ? receive_frame() : receive_line(); }

  bool send(std::string_view message) {
    if (websocket_) return send_raw(websocket_frame(message));
    std::string line(message);
    line.push_back('\n');
    return send_raw(line);
  }

  void shutdown() { ::shutdown(fd_, SHUT_RDWR); }

 private:
  bool send_raw(std::string_view data) {
    std::lock_guard lock(write_mutex_);
    return send_all(fd_, data);
  }

  bool fill() {
    char chunk[4096];
    for (;;) {
      const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return false;
      buffer_.append(chunk, static_cast<std::size_t>(n));
      return true;
    }
  }

  bool need(std::size_t n) {
    while (buffer_.size() < n)
      if (!fill()) return false;
    return true;
  }

  std::optional<std::string> receive_line() {
    std::size_t scanned = 0;
    for (;;) {
      const auto nl = buffer_.find('\n', scanned);
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (discarding_) {
          discarding_ = false;
          return std::string();
        }
        return line;
      }
      if (buffer_.size() > max_bytes_) {
        buffer_.clear();
        discarding_ = true;
      }
      scanned = buffer_.size();
      if (!fill()) return std::nullopt;
    }
  }

  std::optional<std::string> receive_frame() {
    std::string message;
    bool oversized = false;
    for (;;) {
      if (!need(2)) return std::nullopt;
      const auto b0 = static_cast<std::uint8_t>(buffer_[0]);
      const auto b1 = static_cast<std::uint8_t>(buffer_[1]);
      const bool fin = b0 & 0x80;
      const std::uint8_t opcode = b0 & 0x0F;
      const bool masked = b1 & 0x80;
      std::uint64_t len = b1 & 0x7F;
      std::size_t header = 2;
      if (len == 126) {
        if (!need(4)) return std::nullopt;
        len = (static_cast<std::uint64_t>(static_cast<std::uint8_t>(buffer_[2])) << 8) |
              static_cast<std::uint8_t>(buffer_[3]);
        header = 4;
      } else if (len == 127) {
        if (!need(10)) return std::nullopt;
        len = 0;
        for (int i = 0; i < 8; ++i) len = (len << 8) | static_cast<std::uint8_t>(buffer_[2 + static_cast<std::size_t>(i)]);
        header = 10;
      }
      if (len > max_bytes_) return std::nullopt;  // protocol abuse: drop the connection
      const std::size_t mask_at = header;
      if (masked) header += 4;
      if (!need(header + len)) return std::nullopt;
      std::string payload = buffer_.substr(header, len);
      if (masked)
        for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<char>(payload[i] ^ buffer_[mask_at + i % 4]);
      buffer_.erase(0, header + len);

      if (opcode == 0x8) {
        send_raw(websocket_frame(payload.substr(0, std::min<std::size_t>(payload.size(), 2)), 0x8));
        return std::nullopt;
      }
      if (opcode == 0x9) {
        send_raw(websocket_frame(payload, 0xA));
        continue;
      }
      if (opcode == 0xA) continue;
      if (message.size() + payload.size() > max_bytes_) oversized = true;
      if (!oversized) message += payload;
      if (fin) return oversized ? std::string() : message;
    }
  }

  int fd_;
  std::size_t max_bytes_;
  std::string buffer_;
  bool websocket_ = false;
  bool discarding_ = false;
  std::mutex write_mutex_;
};

// Bounded outbound queue drained by a dedicated writer thread.
class Outbox {
 public:
  Outbox(Channel& channel, std::size_t capacity, std::string name)
      : channel_(channel), capacity_(capacity), name_(std::move(name)), writer_([this] { run(); }) {}
  Outbox(const Outbox&) = delete;
  Outbox& operator=(const Outbox&) = delete;
  ~Outbox() { close(); }

  void push(std::string message) {
    {
      std::lock_guard lock(mutex_);
      if (closed_) return;
      if (queue_.size() >= capacity_) {
        queue_.pop_front();
        ++dropped_;
        if (dropped_ == 1 || dropped_ % 1000 == 0)
          std::cerr << "gazekb: outbound queue full for " << name_ << ", dropped " << dropped_
                    << " oldest record(s)\n";
      }
      queue_.push_back(std::move(message));
    }
    cv_.notify_one();
  }

  std::size_t dropped() const {
    std::lock_guard lock(mutex_);
    return dropped_;
  }

  // Sends what is queued, then stops the writer.
  void close() {
    {
      std::lock_guard lock(mutex_);
      closed_ = true;
    }
    cv_.notify_one();
    if (writer_.joinable()) writer_.join();
  }

 private:
  void run() {
    std::unique_lock lock(mutex_);
    for (;;) {
      cv_.wait(lock, [this] { return closed_ || !queue_.empty(); });
      if (queue_.empty()) return;
      std::string msg = std::move(queue_.front());
      queue_.pop_front();
      lock.unlock();
      const bool ok = channel_.send(msg);
      lock.lock();
      if (!ok) {
        queue_.clear();
        closed_ = true;
        return;
      }
    }
  }

  Channel& channel_;
  std::size_t capacity_;
  std::string name_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::string> queue_;
  std::size_t dropped_ = 0;
  bool closed_ = false;
  std::thread writer_;
};

}  // namespace net

class Server {
 public:
  explicit Server(ServerConfig config) : config_(std::move(config)) { config_.validate(); }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;
  ~Server() { stop(); }

  // Binds and starts accepting; returns the bound port.
  int start() {
    std::error_code ec;
    std::filesystem::create_directories(config_.log_dir, ec);
    if (ec || !std::filesystem::is_directory(config_.log_dir))
      throw ServerError("log directory not usable: " + config_.log_dir.string());

    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(config_.port);
    if (getaddrinfo(config_.host.c_str(), port.c_str(), &hints, &res) != 0 || res == nullptr)
      throw ServerError("cannot resolve listen host " + config_.host);
    listen_fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    const bool bound = listen_fd_ >= 0 && ::bind(listen_fd_, res->ai_addr, res->ai_addrlen) == 0;
    freeaddrinfo(res);
    if (!bound || ::listen(listen_fd_, 64) != 0) {
      const std::string why = std::strerror(errno);
      if (listen_fd_ >= 0) ::close(listen_fd_);
      listen_fd_ = -1;
      throw ServerError("cannot listen on " + config_.host + ":" + port + ": " + why);
    }
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
    return port_;
  }

  int port() const noexcept { return port_; }

  // Stops accepting, disconnects clients and closes open sessions.
  void stop() {
    if (!running_.exchange(false)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (acceptor_.joinable()) acceptor_.join();
    std::list<std::shared_ptr<Connection>> conns;
    {
      std::lock_guard lock(registry_mutex_);
      conns = connections_;
    }
    for (auto& c : conns) c->channel.shutdown();
    for (auto& c : conns)
      if (c->thread.joinable()) c->thread.join();
    std::lock_guard lock(registry_mutex_);
    for (auto& [token, entry] : sessions_) {
      std::lock_guard session_lock(entry->mutex);
      close_session(*entry, "server-stopped");
    }
  }

  // Blocks until stop() is called from another thread or a signal handler
  // flips `interrupted`.
  void wait(const std::atomic<bool>& interrupted) {
    while (running_ && !interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }

  // Paths of logs written so far, in completion order.
  std::vector<std::filesystem::path> written_logs() const {
    std::lock_guard lock(written_mutex_);
    return written_;
  }

  std::size_t dropped_records() const noexcept { return dropped_total_.load(); }

 private:
  struct Connection;

  struct SessionEntry {
    std::string token;
    std::mutex mutex;
    std::unique_ptr<Session> session;
    Connection* producer = nullptr;
    Connection* consumer = nullptr;
    bool log_written = false;
  };

  struct Connection {
    Connection(int fd, std::size_t max_bytes) : channel(fd, max_bytes) {}
    net::Channel channel;
    std::unique_ptr<net::Outbox> outbox;
    std::thread thread;
    std::shared_ptr<SessionEntry> entry;
    std::string role;
    FrameDecoder decoder;
  };

  void accept_loop() {
    while (running_) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR || errno == ECONNABORTED) continue;
        return;
      }
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      auto conn = std::make_shared<Connection>(fd, config_.max_message_bytes);
      std::lock_guard lock(registry_mutex_);
      // reap finished connections
      for (auto it = connections_.begin(); it != connections_.end();) {
        if ((*it)->thread.joinable() && finished_.count(it->get())) {
          (*it)->thread.join();
          finished_.erase(it->get());
          it = connections_.erase(it);
        } else {
          ++it;
        }
      }
      connections_.push_back(conn);
      conn->thread = std::thread([this, c = conn.get()] { serve(*c); });
    }
  }

  static std::string error_record(std::int64_t t_ms, const std::string& message, std::optional<std::size_t> pos = {}) {
    nlohmann::json payload{{"message", message}};
    if (pos) payload["position"] = *pos;
    return event_message(t_ms, "error", payload).dump();
  }

  void serve(Connection& c) {
    if (c.channel.open()) {
      c.outbox = std::make_unique<net::Outbox>(c.channel, config_.queue_capacity, "connection");
      while (const auto msg = c.channel.receive()) {
        if (msg->empty()) {
          reply_error(c, "message too large or empty");
          continue;
        }
        handle(c, *msg);
      }
    }
    disconnect(c);
    if (c.outbox) {
      dropped_total_ += c.outbox->dropped();
      c.outbox->close();
    }
    std::lock_guard lock(registry_mutex_);
    finished_.insert(&c);
  }

  void reply_error(Connection& c, const std::string& message, std::optional<std::size_t> pos = {}) {
    std::int64_t t = 0;
    if (c.entry) {
      std::lock_guard lock(c.entry->mutex);
      t = c.entry->session->last_t_ms();
    }
    c.outbox->push(error_record(t, message, pos));
  }

  void handle(Connection& c, const std::string& text) {
    InboundMessage msg;
    try {
      msg = c.entry && c.role != "events" ? c.decoder.next(text) : decode_message(text);
    } catch (const DecodeError& e) {
      reply_error(c, e.what(), e.position);
      return;
    }
    if (const auto* hello = std::get_if<HelloMessage>(&msg)) {
      handshake(c, *hello);
      return;
    }
    if (!c.entry) {
      reply_error(c, "handshake required: send {\"session\": token, \"role\": ...} first");
      return;
    }
    if (c.role == "events") {
      reply_error(c, "this connection has role events and cannot send input");
      return;
    }
    SessionEntry& e = *c.entry;
    std::lock_guard lock(e.mutex);
    Session& s = *e.session;
    if (s.closed()) {
      c.outbox->push(error_record(s.last_t_ms(), "session already ended"));
      return;
    }
    StepResult r;
    std::int64_t t = 0;
    try {
      if (const auto* f = std::get_if<ClassificationFrame>(&msg)) {
        t = f->t_ms;
        r = s.on_frame(*f);
      } else if (const auto* p = std::get_if<GazePointFrame>(&msg)) {
        t = p->t_ms;
        r = s.on_point(*p);
      } else if (const auto* k = std::get_if<ClickMessage>(&msg)) {
        t = k->t_ms;
        r = s.on_direct(k->command, k->t_ms);
      }
    } catch (const std::exception& ex) {
      c.outbox->push(error_record(s.last_t_ms(), ex.what()));
      return;
    }
    publish(e, r, t);
    if (r.ended) close_session(e, "completed");
  }

  void handshake(Connection& c, const HelloMessage& hello) {
    if (c.entry) {
      reply_error(c, "handshake already done for session " + c.entry->token);
      return;
    }
    std::shared_ptr<SessionEntry> entry;
    {
      std::lock_guard lock(registry_mutex_);
      auto& slot = sessions_[hello.session];
      if (!slot) {
        slot = std::make_shared<SessionEntry>();
        slot->token = hello.session;
        LogHeader h;
        h.config = config_.engine;
        h.layout = config_.layout;
        h.target_text = hello.target.value_or(config_.default_target);
        h.source = "live";
        h.seed = config_.seed;
        h.extra = {{"session", hello.session}};
        try {
          commands_for_text(h.layout, h.target_text);
        } catch (const UntypeableCharacter& ex) {
          sessions_.erase(hello.session);
          c.outbox->push(error_record(0, std::string("target not typeable: ") + ex.what()));
          return;
        }
        slot->session = std::make_unique<Session>(std::move(h));
      }
      entry = slot;
    }
    std::lock_guard lock(entry->mutex);
    if (entry->session->closed()) {
      c.outbox->push(error_record(entry->session->last_t_ms(), "session " + hello.session + " already ended"));
      return;
    }
    const bool produces = hello.role != "events";
    const bool consumes = hello.role != "frames";
    if ((produces && entry->producer) || (consumes && entry->consumer)) {
      c.outbox->push(error_record(entry->session->last_t_ms(),
                                  "session " + hello.session + " already has a " + (produces && entry->producer ? "frame producer" : "event consumer")));
      return;
    }
    if (produces) entry->producer = &c;
    if (consumes) entry->consumer = &c;
    c.entry = entry;
    c.role = hello.role;
    const Session& s = *entry->session;
    c.outbox->push(event_message(s.last_t_ms(), "hello",
                                 {{"session", hello.session},
                                  {"role", hello.role},
                                  {"mode", std::string(to_string(s.config().mode))},
                                  {"dwell_frames", s.config().dwell_frames},
                                  {"trial_frames", s.config().trial_frames},
                                  {"layout", to_json(s.layout())}})
                       .dump());
    if (consumes) c.outbox->push(state(s).dump());
  }

  static nlohmann::json state(const Session& s) {
    auto m = state_message(s.keyboard(), s.layout(), s.last_t_ms(), s.progress(), to_string(s.config().mode));
    m["payload"]["highlight"] = s.candidate() ? nlohmann::json(command_of_direction(*s.candidate()).value()) : nlohmann::json(nullptr);
    return m;
  }

  // Caller holds e.mutex.
  void publish(SessionEntry& e, const StepResult& r, std::int64_t t) {
    if (!e.consumer) return;
    if (r.selection) e.consumer->outbox->push(to_message(*r.selection).dump());
    for (const auto& f : r.feedback) e.consumer->outbox->push(to_message(f).dump());
    auto st = state(*e.session);
    st["t_ms"] = t;
    e.consumer->outbox->push(st.dump());
  }

  // Caller holds e.mutex.
  void close_session(SessionEntry& e, const std::string& reason) {
    if (e.log_written) return;
    Session& s = *e.session;
    if (!s.closed()) s.finish(s.last_t_ms(), reason);
    write_log(e);
    if (e.consumer) {
      const auto* end = s.log().end();
      e.consumer->outbox->push(event_message(s.last_t_ms(), "session_end",
                                             {{"complete", end->complete}, {"reason", end->reason}, {"typed", utf8::encode(end->typed)}})
                                   .dump());
    }
  }

  void write_log(SessionEntry& e) {
    std::string stem;
    for (char ch : e.token) stem.push_back(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' ? ch : '_');
    std::filesystem::path path = config_.log_dir / (stem + ".jsonl");
    for (int i = 1; std::filesystem::exists(path); ++i) path = config_.log_dir / (stem + "-" + std::to_string(i) + ".jsonl");
    std::ofstream out(path, std::ios::binary);
    out << serialize_log(e.session->log());
    if (!out) {
      std::cerr << "gazekb: failed to write " << path << "\n";
      return;
    }
    e.log_written = true;
    std::lock_guard lock(written_mutex_);
    written_.push_back(path);
  }

  void disconnect(Connection& c) {
    if (!c.entry) return;
    SessionEntry& e = *c.entry;
    std::lock_guard lock(e.mutex);
    if (e.consumer == &c) e.consumer = nullptr;
    if (e.producer == &c) {
      e.producer = nullptr;
      close_session(e, "disconnected");
    }
  }

  ServerConfig config_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  mutable std::mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<SessionEntry>> sessions_;
  std::list<std::shared_ptr<Connection>> connections_;
  std::set<const Connection*> finished_;
  mutable std::mutex written_mutex_;
  std::vector<std::filesystem::path> written_;
  std::atomic<std::size_t> dropped_total_{0};
};

}  // namespace gazekb
