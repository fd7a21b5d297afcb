#include <gtest/gtest.h>

#include <poll.h>

#include <chrono>
#include <sstream>

#include "gazekb/cli.hpp"

using namespace gazekb;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = GAZEKB_SOURCE_DIR;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("gazekb_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

class Client {
 public:
  explicit Client(int port, int rcvbuf = 0) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (rcvbuf > 0) ::setsockopt(fd_, SOL_SOCKET, SO_RCVBUF, &rcvbuf, sizeof rcvbuf);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) throw std::runtime_error("connect failed");
  }
  ~Client() { close(); }
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  void send_raw(std::string_view s) { ASSERT_TRUE(net::send_all(fd_, s)); }
  void send(const std::string& line) { send_raw(line + "\n"); }
  void send(const char* line) { send(std::string(line)); }
  void send(const nlohmann::json& j) { send(j.dump()); }

  std::optional<std::string> read_line(int timeout_ms = 5000) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    for (;;) {
      if (const auto nl = buf_.find('\n'); nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        return line;
      }
      if (!fill(deadline)) return std::nullopt;
    }
  }

  // Reads records until one of the given kind arrives.
  std::optional<nlohmann::json> until(const std::string& kind, int timeout_ms = 5000) {
    while (const auto line = read_line(timeout_ms)) {
      auto j = nlohmann::json::parse(*line);
      if (j["kind"] == kind) return j;
    }
    return std::nullopt;
  }

  bool fill(std::chrono::steady_clock::time_point deadline) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return false;
    pollfd p{fd_, POLLIN, 0};
    if (::poll(&p, 1, static_cast<int>(left.count())) <= 0) return false;
    char chunk[4096];
    const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
    if (n <= 0) return false;
    buf_.append(chunk, static_cast<std::size_t>(n));
    return true;
  }

  std::string& buffer() { return buf_; }
  int fd() const { return fd_; }

 private:
  int fd_ = -1;
  std::string buf_;
};

nlohmann::json hello(const std::string& token, const std::string& role, const std::string& target = "Paint") {
  return {{"session", token}, {"role", role}, {"target", target}};
}

// Inputs a simulated user would send for `target` with the given modality.
std::vector<std::string> scripted_inputs(Modality modality, const std::u32string& target, std::uint64_t seed,
                                         double diag = 1.0) {
  ExperimentConfig cfg;
  cfg.modality = modality;
  cfg.confusion = ConfusionMatrix::diagonal(diag);
  cfg.user.reaction_frames = 5;
  const auto log = run_session(cfg, target, seed);
  std::vector<std::string> out;
  for (const auto& e : log.events) {
    if (e.kind != LogKind::frame) continue;
    if (const auto* f = std::get_if<ClassificationFrame>(&e.payload)) out.push_back(encode_frame(*f));
    else out.push_back(encode_point(std::get<GazePointFrame>(e.payload)));
  }
  return out;
}

ServerConfig server_config(const fs::path& logs) {
  ServerConfig c;
  c.port = 0;
  c.log_dir = logs;
  return c;
}

std::string run(int (*fn)(const std::vector<fs::path>&, std::ostream&, std::ostream&, bool), const std::vector<fs::path>& a,
                int& code) {
  std::ostringstream out, err;
  code = fn(a, out, err, false);
  return out.str() + err.str();
}

}  // namespace

TEST(ValidateLayout, ShippedDefaultMatchesBuiltIn) {
  const auto p = kSource / "configs" / "default_layout.json";
  EXPECT_EQ(parse_layout(read_file(p)), default_layout());
  std::ostringstream out, err;
  EXPECT_EQ(cli::cmd_validate_layout(p, std::nullopt, out, err), 0);
}

TEST(ValidateLayout, ViolationsAndErrors) {
  TempDir dir("validate");
  auto l = default_layout();
  l.groups[2][0] = U'a';
  write(dir.path / "dup.json", serialize_layout(l));
  std::ostringstream out, err;
  EXPECT_EQ(cli::cmd_validate_layout(dir.path / "dup.json", std::nullopt, out, err), 1);
  EXPECT_NE(out.str().find("duplicate"), std::string::npos);
  EXPECT_EQ(cli::cmd_validate_layout(dir.path / "missing.json", std::nullopt, out, err), 2);
  write(dir.path / "bad.json", "{");
  EXPECT_EQ(cli::cmd_validate_layout(dir.path / "bad.json", std::nullopt, out, err), 2);
  EXPECT_EQ(cli::cmd_validate_layout(kSource / "configs" / "default_layout.json", U"Zebra", out, err), 1);
}

TEST(Simulate, WritesReportFiles) {
  TempDir dir("simulate");
  write(dir.path / "cfg.json", R"({"sentence":"Paint","n_virtual_users":3,"confusion":{"diagonal":0.95},"seed":5})");
  cli::SimulateOptions o;
  o.config = dir.path / "cfg.json";
  o.out_dir = dir.path / "out";
  o.engine.mode = "sync";
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_simulate(o, out, err), 0) << err.str();
  for (const char* f : {"sessions.csv", "summary.txt", "summary.json", "logs/user0.jsonl", "logs/user2.jsonl"})
    EXPECT_TRUE(fs::exists(o.out_dir / f)) << f;
  const auto summary = nlohmann::json::parse(read_file(o.out_dir / "summary.json"));
  EXPECT_EQ(summary["mode"], "sync");
  EXPECT_EQ(summary["n_virtual_users"], 3);
  EXPECT_NE(out.str().find("ITR_com"), std::string::npos);
  std::ostringstream rout, rerr;
  EXPECT_EQ(cli::cmd_replay(o.out_dir / "logs" / "user1.jsonl", rout, rerr), 0) << rout.str() << rerr.str();
}

TEST(Simulate, ConfigErrors) {
  TempDir dir("simulate_err");
  cli::SimulateOptions o;
  o.out_dir = dir.path / "out";
  std::ostringstream out, err;
  o.config = dir.path / "nope.json";
  EXPECT_EQ(cli::cmd_simulate(o, out, err), 2);
  EXPECT_NE(err.str().find("cannot read"), std::string::npos);
  std::string cm = ConfusionMatrix::identity().to_text();
  cm.replace(cm.find("0 0 0 0 0 1 0 0 0"), 17, "0 0 0 0 0 1 0 0 1");  // row 6 sums to 2
  write(dir.path / "cm.txt", cm);
  write(dir.path / "cfg.json", R"({"confusion":{"file":"cm.txt"}})");
  o.config = dir.path / "cfg.json";
  err.str("");
  EXPECT_EQ(cli::cmd_simulate(o, out, err), 2);
  EXPECT_NE(err.str().find("row 6"), std::string::npos) << err.str();
}

TEST(Replay, ExitCodes) {
  TempDir dir("replay");
  ExperimentConfig cfg;
  cfg.confusion = ConfusionMatrix::diagonal(0.95);
  const auto log = run_session(cfg, U"Paint", 3);
  write(dir.path / "ok.jsonl", serialize_log(log));
  std::ostringstream out, err;
  EXPECT_EQ(cli::cmd_replay(dir.path / "ok.jsonl", out, err), 0);

  // the frame that completed the first dwell now shows the eyes disagreeing
  auto bad = log;
  std::size_t frames = 0;
  for (std::size_t i = 1; i < bad.events.size(); ++i) {
    frames += bad.events[i - 1].kind == LogKind::frame;
    if (bad.events[i].kind == LogKind::selection) {
      auto& f = std::get<ClassificationFrame>(bad.events[i - 1].payload);
      f.left = one_hot(Direction::N);
      f.right = one_hot(Direction::S);
      break;
    }
  }
  write(dir.path / "tampered.jsonl", serialize_log(bad));
  out.str("");
  EXPECT_EQ(cli::cmd_replay(dir.path / "tampered.jsonl", out, err), 1);
  EXPECT_NE(out.str().find("after frame " + std::to_string(frames) + ")"), std::string::npos) << out.str();

  write(dir.path / "empty.jsonl", "");
  err.str("");
  EXPECT_EQ(cli::cmd_replay(dir.path / "empty.jsonl", out, err), 2);
  EXPECT_NE(err.str().find("parse error"), std::string::npos);
  EXPECT_EQ(cli::cmd_replay(dir.path / "absent.jsonl", out, err), 2);
}

TEST(Report, SyntheticLogsClosedForm) {
  TempDir dir("report");
  const auto l = default_layout();
  auto make = [&](std::u32string target, std::int64_t ms, std::size_t type_prefix) {
    LogHeader h;
    h.layout = l;
    h.target_text = target;
    h.source = "test";
    Session s(h);
    const auto cmds = commands_for_text(l, target.substr(0, type_prefix));
    for (std::size_t i = 0; i < cmds.size(); ++i)
      s.on_direct(cmds[i], ms * static_cast<std::int64_t>(i + 1) / static_cast<std::int64_t>(cmds.size()));
    if (!s.closed()) s.finish(ms, "stopped");
    return serialize_log(s.log());
  };
  const std::u32string sentence(kTaskSentence);
  write(dir.path / "a.jsonl", make(sentence, 120000, sentence.size()));  // 11.5 letters/min
  write(dir.path / "b.jsonl", make(sentence, 60000, sentence.size()));   // 23 letters/min
  write(dir.path / "c.jsonl", make(sentence, 60000, 5));                 // incomplete

  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_report({dir.path}, out, err, true), 0) << err.str();
  const auto csv = out.str();
  EXPECT_NE(csv.find("a.jsonl,1,11.500000,66.784582,72.908275,46,1.000000,1.000000,2.000000"), std::string::npos) << csv;
  EXPECT_NE(csv.find("b.jsonl,1,23.000000,133.569163,145.816550,46,"), std::string::npos) << csv;
  EXPECT_NE(csv.find("c.jsonl,0,"), std::string::npos);

  out.str("");
  ASSERT_EQ(cli::cmd_report({dir.path}, out, err), 0);
  EXPECT_NE(out.str().find("mean ± sd (n=2)"), std::string::npos) << out.str();
  EXPECT_NE(out.str().find("17.25 ± 8.13"), std::string::npos) << out.str();
  EXPECT_NE(out.str().find("excluded (incomplete): c.jsonl"), std::string::npos);

  int code = -1;
  const auto empty = run(&cli::cmd_report, {}, code);
  EXPECT_EQ(code, 0);
  EXPECT_NE(empty.find("n=0"), std::string::npos);
}

TEST(Server, ScriptedClientTypesSentenceAndLogReplays) {
  TempDir dir("server_type");
  Server server(server_config(dir.path));
  const int port = server.start();
  Client c(port);
  c.send(hello("alice", "both"));
  ASSERT_TRUE(c.until("hello"));
  const auto inputs = scripted_inputs(Modality::point, U"Paint", 11);
  for (const auto& line : inputs) c.send(line);
  const auto end = c.until("session_end", 10000);
  ASSERT_TRUE(end);
  EXPECT_EQ((*end)["payload"]["complete"], true);
  EXPECT_EQ((*end)["payload"]["typed"], "Paint");
  c.close();
  server.stop();
  const auto logs = server.written_logs();
  ASSERT_EQ(logs.size(), 1u);
  EXPECT_EQ(logs[0].filename(), "alice.jsonl");
  std::ostringstream out, err;
  EXPECT_EQ(cli::cmd_replay(logs[0], out, err), 0) << out.str() << err.str();
  const auto log = parse_log(read_file(logs[0]));
  EXPECT_TRUE(log.complete());
  EXPECT_EQ(log.header.source, "live");
}

TEST(Server, EventStreamCarriesLettersAndState) {
  TempDir dir("server_events");
  Server server(server_config(dir.path));
  const int port = server.start();
  Client ui(port), gaze(port);
  ui.send(hello("s1", "events", "Pa"));
  ASSERT_TRUE(ui.until("state"));
  gaze.send(hello("s1", "frames"));
  ASSERT_TRUE(gaze.until("hello"));
  for (const auto& line : scripted_inputs(Modality::classification, U"Pa", 2)) gaze.send(line);
  std::u32string typed;
  std::optional<nlohmann::json> last_state;
  bool ended = false;
  while (const auto line = ui.read_line()) {
    const auto j = nlohmann::json::parse(*line);
    if (j["kind"] == "letter_added") typed += utf8::decode(j["payload"]["char"].get<std::string>());
    if (j["kind"] == "state") last_state = j;
    if (j["kind"] == "session_end") {
      ended = true;
      break;
    }
  }
  ASSERT_TRUE(ended);
  EXPECT_EQ(typed, U"Pa");
  ASSERT_TRUE(last_state);
  EXPECT_EQ((*last_state)["payload"]["typed"], "Pa");
}

TEST(Server, MalformedMessagesAreRejectedWithoutTeardown) {
  TempDir dir("server_malformed");
  Server server(server_config(dir.path));
  const int port = server.start();
  Client c(port);
  c.send(R"({"t_ms":1,"x":0.5,"y":0.5})");
  auto err = c.until("error");
  ASSERT_TRUE(err);
  EXPECT_NE((*err)["payload"]["message"].get<std::string>().find("handshake"), std::string::npos);
  c.send(hello("m", "both", "a"));
  ASSERT_TRUE(c.until("hello"));
  c.send("{not json");
  ASSERT_TRUE(c.until("error"));
  c.send(R"({"t_ms":5,"left":[0.5,0,0,0,0,0,0,0,0],"right":[1,0,0,0,0,0,0,0,0]})");
  err = c.until("error");
  ASSERT_TRUE(err);
  EXPECT_TRUE((*err)["payload"].contains("position"));
  c.send(R"({"t_ms":10,"command":1})");
  c.send(R"({"t_ms":9,"command":2})");
  err = c.until("error");
  ASSERT_TRUE(err);
  EXPECT_NE((*err)["payload"]["message"].get<std::string>().find("non-monotone"), std::string::npos);
  c.send(R"({"t_ms":11,"command":2})");
  const auto end = c.until("session_end");
  ASSERT_TRUE(end);
  EXPECT_EQ((*end)["payload"]["typed"], "a");
}

TEST(Server, ConcurrentSessionsAreIndependent) {
  TempDir dir("server_concurrent");
  Server server(server_config(dir.path));
  const int port = server.start();
  const std::vector<std::pair<std::string, std::u32string>> jobs{{"u1", U"Pai"}, {"u2", U"which"}, {"u3", U"land"}};
  std::vector<std::thread> threads;
  std::vector<std::string> typed(jobs.size());
  for (std::size_t i = 0; i < jobs.size(); ++i)
    threads.emplace_back([&, i] {
      Client c(port);
      c.send(hello(jobs[i].first, "both", utf8::encode(jobs[i].second)));
      for (const auto& line : scripted_inputs(Modality::classification, jobs[i].second, 40 + i, 0.98)) c.send(line);
      if (const auto end = c.until("session_end", 20000)) typed[i] = (*end)["payload"]["typed"];
    });
  for (auto& t : threads) t.join();
  server.stop();
  for (std::size_t i = 0; i < jobs.size(); ++i) EXPECT_EQ(typed[i], utf8::encode(jobs[i].second));
  const auto logs = server.written_logs();
  ASSERT_EQ(logs.size(), 3u);
  for (const auto& p : logs) {
    std::ostringstream out, err;
    EXPECT_EQ(cli::cmd_replay(p, out, err), 0) << p << out.str();
  }
}

TEST(Server, DisconnectFlagsIncompleteAndKeepsServing) {
  TempDir dir("server_disconnect");
  Server server(server_config(dir.path));
  const int port = server.start();
  {
    Client c(port);
    c.send(hello("drop", "both"));
    ASSERT_TRUE(c.until("hello"));
    const auto inputs = scripted_inputs(Modality::classification, U"Paint", 5);
    for (std::size_t i = 0; i < inputs.size() / 2; ++i) c.send(inputs[i]);
    c.send(R"({"t_ms":1,"command":1})");  // rejected: sync point so all earlier input is applied
    ASSERT_TRUE(c.until("error"));
  }
  for (int i = 0; i < 100 && server.written_logs().empty(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  ASSERT_EQ(server.written_logs().size(), 1u);
  const auto log = parse_log(read_file(server.written_logs()[0]));
  EXPECT_FALSE(log.complete());
  EXPECT_EQ(log.end()->reason, "disconnected");
  std::ostringstream out, err;
  EXPECT_EQ(cli::cmd_replay(server.written_logs()[0], out, err), 0) << out.str();

  // the token is spent, a new one works
  Client again(port);
  again.send(hello("drop", "both"));
  ASSERT_TRUE(again.until("error"));
  Client fresh(port);
  fresh.send(hello("next", "both", "a"));
  ASSERT_TRUE(fresh.until("hello"));
  fresh.send(R"({"t_ms":10,"command":1})");
  fresh.send(R"({"t_ms":20,"command":2})");
  ASSERT_TRUE(fresh.until("session_end"));
}

TEST(Server, SlowConsumerNeverBlocksIngestion) {
  TempDir dir("server_slow");
  auto cfg = server_config(dir.path);
  cfg.queue_capacity = 8;
  Server server(cfg);
  const int port = server.start();
  Client ui(port, 4096);
  ui.send(hello("slow", "events", "Painting which landform"));
  Client gaze(port);
  gaze.send(hello("slow", "frames"));
  ASSERT_TRUE(gaze.until("hello"));
  const auto start = std::chrono::steady_clock::now();
  // ui never reads
  for (int k = 1; k <= 6000; ++k) {
    const auto d = direction_at((k / 40) % 9);
    gaze.send(encode_frame({k * 33, one_hot(d), one_hot(d)}));
  }
  gaze.send("{bad");
  ASSERT_TRUE(gaze.until("error", 20000));
  const auto elapsed = std::chrono::steady_clock::now() - start;
  EXPECT_LT(elapsed, std::chrono::seconds(20));
  ui.close();
  gaze.close();
  server.stop();
  EXPECT_GT(server.dropped_records(), 0u);
}

TEST(Server, WebSocketClient) {
  TempDir dir("server_ws");
  Server server(server_config(dir.path));
  const int port = server.start();
  Client ws(port);
  ws.send_raw(
      "GET /session HTTP/1.1\r\nHost: localhost\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
      "Sec-WebSocket-Key: dGhlIHNhbXBsZSBub25jZQ==\r\nSec-WebSocket-Version: 13\r\n\r\n");
  while (ws.buffer().find("\r\n\r\n") == std::string::npos)
    ASSERT_TRUE(ws.fill(std::chrono::steady_clock::now() + std::chrono::seconds(5)));
  // RFC 6455 sample key/accept pair
  EXPECT_NE(ws.buffer().find("Sec-WebSocket-Accept: s3pPLMBiTxaQ9kYGzzhZRbK+xOo="), std::string::npos);
  ws.buffer().erase(0, ws.buffer().find("\r\n\r\n") + 4);

  auto send_masked = [&](const std::string& payload) {
    std::string f;
    f.push_back(static_cast<char>(0x81));
    if (payload.size() < 126) {
      f.push_back(static_cast<char>(0x80 | payload.size()));
    } else {
      f.push_back(static_cast<char>(0x80 | 126));
      f.push_back(static_cast<char>(payload.size() >> 8));
      f.push_back(static_cast<char>(payload.size() & 0xFF));
    }
    const char mask[4] = {0x11, 0x22, 0x33, 0x44};
    f.append(mask, 4);
    for (std::size_t i = 0; i < payload.size(); ++i) f.push_back(static_cast<char>(payload[i] ^ mask[i % 4]));
    ws.send_raw(f);
  };
  auto read_frame = [&]() -> std::optional<std::string> {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
    auto& b = ws.buffer();
    while (b.size() < 2)
      if (!ws.fill(deadline)) return std::nullopt;
    std::size_t len = static_cast<std::uint8_t>(b[1]) & 0x7F, header = 2;
    if (len == 126) {
      while (b.size() < 4)
        if (!ws.fill(deadline)) return std::nullopt;
      len = (static_cast<std::size_t>(static_cast<std::uint8_t>(b[2])) << 8) | static_cast<std::uint8_t>(b[3]);
      header = 4;
    }
    while (b.size() < header + len)
      if (!ws.fill(deadline)) return std::nullopt;
    std::string payload = b.substr(header, len);
    b.erase(0, header + len);
    return payload;
  };

  send_masked(hello("web", "both", "a").dump());
  auto first = read_frame();
  ASSERT_TRUE(first);
  EXPECT_EQ(nlohmann::json::parse(*first)["kind"], "hello");
  // mouse baseline: hover C1 long enough to open it, then click slot C2 ('a')
  const auto c1 = default_layout().centers.at(1);
  for (int k = 1; k <= 30; ++k) send_masked(encode_point({k * 33, c1.x, c1.y}));
  send_masked(R"({"t_ms":1000,"command":2})");
  bool ended = false;
  while (const auto f = read_frame()) {
    const auto j = nlohmann::json::parse(*f);
    if (j["kind"] == "session_end") {
      EXPECT_EQ(j["payload"]["typed"], "a");
      ended = true;
      break;
    }
  }
  EXPECT_TRUE(ended);
}
