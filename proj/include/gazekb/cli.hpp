#pragma once

// Subcommand implementations behind the gazekb executable. Each returns the
// process exit code: 0 success, 1 verification or validation failure,
// 2 usage, input or configuration error.

#include <algorithm>
#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "gazekb/report.hpp"
#include "gazekb/server.hpp"
#include "gazekb/simulation.hpp"

namespace gazekb::cli {

inline constexpr int kOk = 0;
inline constexpr int kFailed = 1;
inline constexpr int kUsage = 2;

// Command-line engine overrides shared by serve and simulate.
struct EngineOverrides {
  std::optional<std::string> mode;
  std::optional<int> dwell_frames;
  std::optional<int> trial_frames;
  std::optional<double> alpha;

  EngineConfig apply(EngineConfig c) const {
    if (mode) c.mode = selection_mode_from(*mode);
    if (dwell_frames) c.dwell_frames = *dwell_frames;
    if (trial_frames) c.trial_frames = *trial_frames;
    if (alpha) c.alpha = *alpha;
    c.validate();
    return c;
  }
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw ConfigError("cannot write " + p.string());
}

struct SimulateOptions {
  std::filesystem::path config;
  std::filesystem::path out_dir = "simulation-out";
  EngineOverrides engine;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> layout;
  std::optional<int> users;
  unsigned threads = 0;
};

inline int cmd_simulate(const SimulateOptions& o, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg;
  try {
    cfg = load_experiment_config(o.config);
    cfg.engine = o.engine.apply(cfg.engine);
    if (o.seed) cfg.seed = *o.seed;
    if (o.users) cfg.n_virtual_users = *o.users;
    if (o.layout) cfg.layout = parse_layout(read_file(*o.layout));
    cfg.validate();
    if (const auto v = validate_layout(cfg.layout, cfg.sentence); !v.empty())
      throw ConfigError("layout invalid: " + v.front().detail);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  try {
    const auto report = run_experiment(cfg, cfg.sentence, true, o.threads);
    std::filesystem::create_directories(o.out_dir / "logs");
    std::vector<NamedReport> rows;
    for (const auto& s : report.sessions) {
      const std::string name = "user" + std::to_string(s.user);
      write_text(o.out_dir / "logs" / (name + ".jsonl"), serialize_log(*s.log));
      rows.push_back({name, s.report});
    }
    const std::string table = format_table(rows);
    write_text(o.out_dir / "sessions.csv", format_csv(rows));
    write_text(o.out_dir / "summary.txt", table);
    nlohmann::json summary = to_json(report.summary);
    summary["mode"] = std::string(to_string(cfg.engine.mode));
    summary["modality"] = std::string(to_string(cfg.modality));
    summary["seed"] = cfg.seed;
    summary["n_virtual_users"] = cfg.n_virtual_users;
    nlohmann::json usage = nlohmann::json::object();
    for (const auto& [g, n] : report.group_usage) usage["C" + std::to_string(g)] = n;
    summary["group_usage"] = usage;
    write_text(o.out_dir / "summary.json", summary.dump(2) + "\n");
    out << table;
    return kOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
}

inline int cmd_replay(const std::filesystem::path& path, std::ostream& out, std::ostream& err) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  ReplayResult r;
  try {
    r = replay_text(text);
  } catch (const LogFormatError& e) {
    err << path.string() << ": parse error at " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << path.string() << ": " << e.what() << "\n";
    return kUsage;
  }
  if (r.identical) {
    out << path.string() << ": replay identical\n";
    return kOk;
  }
  const auto lines = split_lines(text);
  // frames fed up to and including the divergent line (1-based)
  std::size_t frames = 0;
  if (r.divergent_line)
    for (std::size_t i = 1; i < std::min(*r.divergent_line, lines.size()); ++i)
      frames += lines[i].find("\"kind\":\"frame\"") != std::string::npos;
  out << path.string() << ": replay diverges";
  if (r.divergent_line) out << " at line " << *r.divergent_line << " (after frame " << frames << ")";
  out << "\n" << r.detail << "\n";
  return kFailed;
}

// Arguments may be log files or directories (all *.jsonl inside, sorted).
inline int cmd_report(const std::vector<std::filesystem::path>& inputs, std::ostream& out, std::ostream& err,
                      bool csv = false) {
  std::vector<std::filesystem::path> files;
  for (const auto& p : inputs) {
    if (std::filesystem::is_directory(p)) {
      std::vector<std::filesystem::path> found;
      for (const auto& e : std::filesystem::directory_iterator(p))
        if (e.path().extension() == ".jsonl") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(p);
    }
  }
  std::vector<NamedReport> rows;
  for (const auto& f : files) {
    try {
      rows.push_back({f.filename().string(), session_report(parse_log(read_file(f)))});
    } catch (const std::exception& e) {
      err << f.string() << ": " << e.what() << "\n";
      return kUsage;
    }
  }
  out << (csv ? format_csv(rows) : format_table(rows));
  return kOk;
}

inline int cmd_validate_layout(const std::filesystem::path& path, std::optional<std::u32string> sentence,
                               std::ostream& out, std::ostream& err) {
  LayoutSpec layout;
  try {
    layout = parse_layout(read_file(path));
  } catch (const std::exception& e) {
    err << path.string() << ": " << e.what() << "\n";
    return kUsage;
  }
  const auto violations = validate_layout(layout, sentence ? std::u32string_view(*sentence) : kTaskSentence);
  if (violations.empty()) {
    out << path.string() << ": valid (" << layout.version << ")\n";
    return kOk;
  }
  for (const auto& v : violations) out << path.string() << ": " << to_string(v.kind) << ": " << v.detail << "\n";
  return kFailed;
}

namespace detail {
inline std::atomic<bool> interrupted{false};
inline void on_signal(int) { interrupted = true; }
}  // namespace detail

struct ServeOptions {
  std::string listen = "127.0.0.1:8765";
  std::filesystem::path log_dir = "logs";
  EngineOverrides engine;
  std::optional<std::filesystem::path> layout;
  std::optional<std::u32string> target;
  std::optional<std::uint64_t> seed;
};

inline int cmd_serve(const ServeOptions& o, std::ostream& out, std::ostream& err) {
  std::unique_ptr<Server> server;
  try {
    ServerConfig cfg;
    std::tie(cfg.host, cfg.port) = parse_listen(o.listen);
    cfg.engine = o.engine.apply(cfg.engine);
    cfg.log_dir = o.log_dir;
    if (o.layout) cfg.layout = parse_layout(read_file(*o.layout));
    if (o.target) cfg.default_target = *o.target;
    cfg.seed = o.seed;
    server = std::make_unique<Server>(cfg);
    const int port = server->start();
    out << "listening on " << cfg.host << ":" << port << ", logs in " << cfg.log_dir.string() << std::endl;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  std::signal(SIGINT, detail::on_signal);
  std::signal(SIGTERM, detail::on_signal);
  server->wait(detail::interrupted);
  server->stop();
  out << "stopped; " << server->written_logs().size() << " session log(s) written" << std::endl;
  return kOk;
}

}  // namespace gazekb::cli
