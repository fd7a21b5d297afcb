#pragma once

// A typing session: selection engine + keyboard + append-only log.
// Used identically by the simulator, the live server and replay, so any
// log a session writes can be reproduced by feeding its inputs back in.

#include <optional>
#include <string>
#include <vector>

#include "gazekb/keyboard.hpp"
#include "gazekb/selection.hpp"
#include "gazekb/session_log.hpp"

namespace gazekb {

struct StepResult {
  std::optional<SelectionEvent> selection;
  std::vector<FeedbackEvent> feedback;  // includes highlight changes
  bool ended = false;
};

class Session {
 public:
  explicit Session(LogHeader header)
      : async_{header.config}, sync_{header.config}, keyboard_(initial_state(header.target_text)) {
    header.config.validate();
    log_.header = std::move(header);
    log_.events.push_back({0, LogKind::session_start, std::monostate{}});
  }

  const SessionLog& log() const noexcept { return log_; }
  SessionLog release_log() && { return std::move(log_); }
  const KeyboardState& keyboard() const noexcept { return keyboard_; }
  const LayoutSpec& layout() const noexcept { return log_.header.layout; }
  const EngineConfig& config() const noexcept { return log_.header.config; }
  bool closed() const noexcept { return closed_; }
  std::optional<Direction> candidate() const noexcept { return candidate_; }
  std::int64_t last_t_ms() const noexcept { return log_.events.back().t_ms; }

  // Fraction of the way to the next selection: dwell progress (async) or
  // elapsed trial fraction (sync).
  double progress() const noexcept {
    if (config().mode == SelectionMode::async)
      return static_cast<double>(async_.delta) / config().dwell_frames;
    return static_cast<double>(sync_.frame_in_trial) / config().trial_frames;
  }

  StepResult on_frame(const ClassificationFrame& frame) {
    ensure_open(frame.t_ms);
    if (!is_valid(frame)) throw StreamError("invalid probability vectors at t_ms=" + std::to_string(frame.t_ms));
    StepResult r;
    const auto ctx = context_of(keyboard_);
    std::optional<SelectionEvent> selection;
    std::optional<Direction> candidate;
    if (config().mode == SelectionMode::async) {
      selection = async_step(async_, frame, ctx);
      candidate = async_.last_selected;
    } else {
      const auto sr = sync_step(sync_, frame, ctx);
      if (sr.trial_started) log_.events.push_back({frame.t_ms, LogKind::trial_start, ++trials_});
      selection = sr.event;
      if (!sr.trial_ended) candidate = weights_leader(sync_.weights);
    }
    log_.events.push_back({frame.t_ms, LogKind::frame, frame});
    if (candidate != candidate_) {
      candidate_ = candidate;
      r.feedback.push_back(highlight(frame.t_ms));
    }
    if (selection) apply_selection(*selection, r);
    return r;
  }

  StepResult on_point(const GazePointFrame& p) {
    ensure_open(p.t_ms);
    if (!is_valid(p)) throw StreamError("gaze point outside [0,1] at t_ms=" + std::to_string(p.t_ms));
    // The classification frame derived from the point is not logged; the
    // point itself is, and replay re-derives the frame from it.
    const auto frame = frame_from_point(p, layout(), context_of(keyboard_));
    const std::size_t mark = log_.events.size();
    auto r = on_frame(frame);
    for (std::size_t i = mark; i < log_.events.size(); ++i)
      if (log_.events[i].kind == LogKind::frame) log_.events[i].payload = p;
    return r;
  }

  // Mouse-style selection that bypasses the engine; restarts its progress.
  StepResult on_direct(CommandId c, std::int64_t t_ms) {
    ensure_open(t_ms);
    async_.delta = 0;
    async_.last_selected.reset();
    sync_.frame_in_trial = 0;
    sync_.gap_remaining = 0;
    sync_.weights.fill(0.0);
    StepResult r;
    if (candidate_) {
      candidate_.reset();
      r.feedback.push_back(highlight(t_ms));
    }
    apply_selection({c, t_ms, SelectionMode::direct, 0.0}, r);
    return r;
  }

  void finish(std::int64_t t_ms, std::string reason) {
    if (closed_) return;
    if (t_ms < last_t_ms()) throw StreamError("session end before last event");
    log_.events.push_back({t_ms, LogKind::session_end, SessionEnd{is_complete(keyboard_), std::move(reason), keyboard_.typed}});
    closed_ = true;
  }

 private:
  static std::optional<Direction> weights_leader(const Weights& w) {
    if (const auto d = decide_trial(w, 1.0)) return d->selected;
    return std::nullopt;
  }

  FeedbackEvent highlight(std::int64_t t) const {
    FeedbackEvent e{FeedbackKind::highlight, std::monostate{}, t};
    if (candidate_) e.payload = command_of_direction(*candidate_);
    return e;
  }

  // Frames are additionally checked for strict order by the engine.
  void ensure_open(std::int64_t t_ms) const {
    if (closed_) throw StreamError("session already ended");
    if (t_ms < last_t_ms())
      throw StreamError("timestamp " + std::to_string(t_ms) + " precedes " + std::to_string(last_t_ms()));
  }

  void apply_selection(const SelectionEvent& sel, StepResult& r) {
    r.selection = sel;
    log_.events.push_back({sel.t_ms, LogKind::selection, sel});
    auto [next, events] = apply_command(layout(), keyboard_, sel.command, sel.t_ms);
    keyboard_ = std::move(next);
    for (const auto& e : events) {
      if (e.kind == FeedbackKind::letter_added)
        log_.events.push_back({e.t_ms, LogKind::letter_added, std::get<char32_t>(e.payload)});
      else if (e.kind == FeedbackKind::letter_deleted)
        log_.events.push_back({e.t_ms, LogKind::letter_deleted, std::get<char32_t>(e.payload)});
      r.feedback.push_back(e);
    }
    if (is_complete(keyboard_)) {
      finish(sel.t_ms, "completed");
      r.ended = true;
    }
  }

  SessionLog log_;
  AsyncState async_;
  SyncState sync_;
  KeyboardState keyboard_;
  std::optional<Direction> candidate_;
  int trials_ = 0;
  bool closed_ = false;
};

struct ReplayResult {
  bool identical = false;
  std::optional<std::size_t> divergent_line;  // 1-based line in the log text
  std::string detail;
  SessionLog regenerated;
};

// Feeds a log's inputs (frames, points, direct selections, end) through a
// fresh session and compares the regenerated log with the original text.
inline ReplayResult replay_text(std::string_view original_text) {
  ReplayResult out;
  const SessionLog original = parse_log(original_text);
  const SessionEnd* end = original.end();
  if (end == nullptr) {
    out.divergent_line = original.events.size() + 2;
    out.detail = "incomplete replay: log has no session_end (truncated?)";
    return out;
  }
  Session session(original.header);
  for (std::size_t i = 1; i < original.events.size(); ++i) {
    const auto& ev = original.events[i];
    const std::size_t line = i + 2;  // header is line 1, session_start line 2
    try {
      if (ev.kind == LogKind::frame) {
        if (const auto* f = std::get_if<ClassificationFrame>(&ev.payload)) session.on_frame(*f);
        else session.on_point(std::get<GazePointFrame>(ev.payload));
      } else if (ev.kind == LogKind::selection) {
        const auto& sel = std::get<SelectionEvent>(ev.payload);
        if (sel.mode == SelectionMode::direct) session.on_direct(sel.command, sel.t_ms);
      } else if (ev.kind == LogKind::session_end) {
        session.finish(ev.t_ms, end->reason);
      }
    } catch (const std::exception& e) {
      out.divergent_line = line;
      out.detail = std::string("replay failed at event ") + std::to_string(i) + ": " + e.what();
      out.regenerated = session.log();
      return out;
    }
  }
  out.regenerated = session.log();
  const std::string regenerated_text = serialize_log(out.regenerated);
  if (regenerated_text == original_text) {
    out.identical = true;
    return out;
  }
  const auto a = split_lines(original_text);
  const auto b = split_lines(regenerated_text);
  for (std::size_t i = 0; i < std::max(a.size(), b.size()); ++i) {
    const std::string lhs = i < a.size() ? a[i] : "<missing>";
    const std::string rhs = i < b.size() ? b[i] : "<missing>";
    if (lhs != rhs) {
      out.divergent_line = i + 1;
      out.detail = "line " + std::to_string(i + 1) + " differs\n  log:    " + lhs + "\n  replay: " + rhs;
      return out;
    }
  }
  out.divergent_line = a.size();
  out.detail = "logs differ in line termination";
  return out;
}

}  // namespace gazekb
