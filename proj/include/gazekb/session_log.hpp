#pragma once

// Session log: a header line followed by one JSON record per event.
//
//   {"header":{"config":{...},"format":"gazekb-session-1","layout":{...},...}}
//   {"kind":"session_start","payload":{},"t_ms":0}
//   {"kind":"frame","payload":{"left":[...],"right":[...]},"t_ms":33}
//   {"kind":"selection","payload":{"command":6,"mode":"async","score":30.0},"t_ms":1000}
//   ...
//   {"kind":"session_end","payload":{"complete":true,"reason":"completed","typed":"..."},"t_ms":92000}
//
// Serialization is canonical (sorted keys, shortest round-trip doubles), so
// a log can be compared byte for byte after replay.

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

#include "gazekb/core.hpp"
#include "gazekb/layout.hpp"
#include "gazekb/utf8.hpp"

namespace gazekb {

inline constexpr std::string_view kLogFormat = "gazekb-session-1";

enum class LogKind : std::uint8_t {
  frame,
  selection,
  letter_added,
  letter_deleted,
  trial_start,
  session_start,
  session_end
};

inline std::string_view to_string(LogKind k) {
  switch (k) {
    case LogKind::frame: return "frame";
    case LogKind::selection: return "selection";
    case LogKind::letter_added: return "letter_added";
    case LogKind::letter_deleted: return "letter_deleted";
    case LogKind::trial_start: return "trial_start";
    case LogKind::session_start: return "session_start";
    case LogKind::session_end: return "session_end";
  }
  return "?";
}

struct LogFormatError : std::runtime_error {
  LogFormatError(std::size_t line_no, const std::string& what)
      : std::runtime_error("line " + std::to_string(line_no) + ": " + what), line(line_no) {}
  std::size_t line;
};

inline LogKind log_kind_from(std::string_view s) {
  for (auto k : {LogKind::frame, LogKind::selection, LogKind::letter_added, LogKind::letter_deleted,
                 LogKind::trial_start, LogKind::session_start, LogKind::session_end})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown event kind \"" + std::string(s) + "\"");
}

struct SessionEnd {
  bool complete = false;
  std::string reason;  // completed | frame-budget | disconnected | ...
  std::u32string typed;
  bool operator==(const SessionEnd&) const = default;
};

using LogPayload =
    std::variant<std::monostate, ClassificationFrame, GazePointFrame, SelectionEvent, char32_t, int, SessionEnd>;

struct LogEvent {
  std::int64_t t_ms = 0;
  LogKind kind = LogKind::session_start;
  LogPayload payload;
  bool operator==(const LogEvent&) const = default;
};

struct LogHeader {
  EngineConfig config;
  LayoutSpec layout;
  std::u32string target_text;
  std::string source;  // simulation | serve | synthetic
  std::optional<std::uint64_t> seed;
  nlohmann::json extra = nlohmann::json::object();
  bool operator==(const LogHeader&) const = default;
};

struct SessionLog {
  LogHeader header;
  std::vector<LogEvent> events;

  const SessionEnd* end() const {
    if (events.empty() || events.back().kind != LogKind::session_end) return nullptr;
    return std::get_if<SessionEnd>(&events.back().payload);
  }
  bool complete() const {
    const auto* e = end();
    return e != nullptr && e->complete;
  }
  bool operator==(const SessionLog&) const = default;
};

inline nlohmann::json to_json(const EngineConfig& c) {
  return {{"mode", std::string(to_string(c.mode))},
          {"dwell_frames", c.dwell_frames},
          {"trial_frames", c.trial_frames},
          {"alpha", c.alpha},
          {"frame_rate", c.frame_rate},
          {"inter_trial_gap_frames", c.inter_trial_gap_frames},
          {"agreement", c.agreement == AgreementRule::gate ? "gate" : "literal"}};
}

inline EngineConfig engine_config_from_json(const nlohmann::json& j, EngineConfig c = {}) {
  if (j.contains("mode")) c.mode = selection_mode_from(j.at("mode").get<std::string>());
  if (j.contains("dwell_frames")) c.dwell_frames = j.at("dwell_frames").get<int>();
  if (j.contains("trial_frames")) c.trial_frames = j.at("trial_frames").get<int>();
  if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
  if (j.contains("frame_rate")) c.frame_rate = j.at("frame_rate").get<double>();
  if (j.contains("inter_trial_gap_frames")) c.inter_trial_gap_frames = j.at("inter_trial_gap_frames").get<int>();
  if (j.contains("agreement")) {
    const auto a = j.at("agreement").get<std::string>();
    if (a == "gate") c.agreement = AgreementRule::gate;
    else if (a == "literal") c.agreement = AgreementRule::literal;
    else throw ContractViolation("unknown agreement rule: " + a);
  }
  c.validate();
  return c;
}

inline nlohmann::json to_json(const ProbVector& v) {
  auto arr = nlohmann::json::array();
  for (double p : v) arr.push_back(p);
  return arr;
}

inline std::string char_string(char32_t ch) {
  std::string s;
  utf8::append(s, ch);
  return s;
}

inline nlohmann::json selection_payload(const SelectionEvent& s) {
  return {{"command", s.command.value()}, {"mode", std::string(to_string(s.mode))}, {"score", s.score}};
}

inline nlohmann::json payload_to_json(const LogPayload& p) {
  return std::visit(
      [](const auto& v) -> nlohmann::json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          return nlohmann::json::object();
        } else if constexpr (std::is_same_v<T, ClassificationFrame>) {
          return {{"left", to_json(v.left)}, {"right", to_json(v.right)}};
        } else if constexpr (std::is_same_v<T, GazePointFrame>) {
          return {{"x", v.x}, {"y", v.y}};
        } else if constexpr (std::is_same_v<T, SelectionEvent>) {
          return selection_payload(v);
        } else if constexpr (std::is_same_v<T, char32_t>) {
          return {{"char", char_string(v)}};
        } else if constexpr (std::is_same_v<T, int>) {
          return {{"trial", v}};
        } else {
          return {{"complete", v.complete}, {"reason", v.reason}, {"typed", utf8::encode(v.typed)}};
        }
      },
      p);
}

inline nlohmann::json to_json(const LogEvent& e) {
  return {{"t_ms", e.t_ms}, {"kind", std::string(to_string(e.kind))}, {"payload", payload_to_json(e.payload)}};
}

inline ProbVector prob_vector_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != kNumTargets) throw std::invalid_argument("expected 9 probabilities");
  ProbVector v{};
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

inline LogEvent log_event_from_json(const nlohmann::json& j) {
  LogEvent e;
  e.t_ms = j.at("t_ms").get<std::int64_t>();
  e.kind = log_kind_from(j.at("kind").get<std::string>());
  const auto& p = j.at("payload");
  switch (e.kind) {
    case LogKind::frame:
      if (p.contains("left")) {
        e.payload = ClassificationFrame{e.t_ms, prob_vector_from_json(p.at("left")), prob_vector_from_json(p.at("right"))};
      } else {
        e.payload = GazePointFrame{e.t_ms, p.at("x").get<double>(), p.at("y").get<double>()};
      }
      break;
    case LogKind::selection:
      e.payload = SelectionEvent{CommandId(p.at("command").get<int>()), e.t_ms,
                                 selection_mode_from(p.at("mode").get<std::string>()), p.at("score").get<double>()};
      break;
    case LogKind::letter_added:
    case LogKind::letter_deleted:
      e.payload = utf8::decode_single(p.at("char").get<std::string>());
      break;
    case LogKind::trial_start:
      e.payload = p.at("trial").get<int>();
      break;
    case LogKind::session_start:
      break;
    case LogKind::session_end:
      e.payload = SessionEnd{p.at("complete").get<bool>(), p.at("reason").get<std::string>(),
                             utf8::decode(p.at("typed").get<std::string>())};
      break;
  }
  return e;
}

inline nlohmann::json to_json(const LogHeader& h) {
  nlohmann::json j{{"format", std::string(kLogFormat)},
                   {"config", to_json(h.config)},
                   {"layout", to_json(h.layout)},
                   {"layout_version", h.layout.version},
                   {"target", utf8::encode(h.target_text)},
                   {"source", h.source},
                   {"extra", h.extra}};
  j["seed"] = h.seed ? nlohmann::json(*h.seed) : nlohmann::json(nullptr);
  return {{"header", j}};
}

inline LogHeader log_header_from_json(const nlohmann::json& outer) {
  const auto& j = outer.at("header");
  if (j.at("format").get<std::string>() != kLogFormat) throw std::invalid_argument("unsupported log format");
  LogHeader h;
  h.config = engine_config_from_json(j.at("config"));
  h.layout = layout_from_json(j.at("layout"));
  h.target_text = utf8::decode(j.at("target").get<std::string>());
  h.source = j.at("source").get<std::string>();
  if (!j.at("seed").is_null()) h.seed = j.at("seed").get<std::uint64_t>();
  h.extra = j.value("extra", nlohmann::json::object());
  return h;
}

inline std::string serialize_line(const nlohmann::json& j) { return j.dump() + "\n"; }

inline std::string serialize_log(const SessionLog& log) {
  std::string out = serialize_line(to_json(log.header));
  for (const auto& e : log.events) out += serialize_line(to_json(e));
  return out;
}

inline std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto nl = text.find('\n', start);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    lines.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

// Throws LogFormatError (1-based line numbers) on anything malformed.
// Structural checks: one header, session_start first, non-decreasing time.
inline SessionLog parse_log(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw LogFormatError(1, "empty log");
  SessionLog log;
  try {
    log.header = log_header_from_json(nlohmann::json::parse(lines[0]));
  } catch (const std::exception& e) {
    throw LogFormatError(1, std::string("bad header: ") + e.what());
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      log.events.push_back(log_event_from_json(nlohmann::json::parse(lines[i])));
    } catch (const std::exception& e) {
      throw LogFormatError(i + 1, e.what());
    }
    const auto& ev = log.events.back();
    if (log.events.size() == 1 && ev.kind != LogKind::session_start)
      throw LogFormatError(i + 1, "first event must be session_start");
    if (log.events.size() > 1 && ev.kind == LogKind::session_start)
      throw LogFormatError(i + 1, "duplicate session_start");
    if (log.events.size() > 1 && log.events[log.events.size() - 2].kind == LogKind::session_end)
      throw LogFormatError(i + 1, "event after session_end");
    if (log.events.size() > 1 && ev.t_ms < log.events[log.events.size() - 2].t_ms)
      throw LogFormatError(i + 1, "timestamp decreases");
  }
  if (log.events.empty()) throw LogFormatError(lines.size(), "no session_start");
  return log;
}

}  // namespace gazekb
