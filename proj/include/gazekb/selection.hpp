#pragma once

// Command selection state machines.
//
// Asynchronous mode selects a target once both eyes have agreed on it for
// dwell_frames consecutive frames; any other outcome restarts the count.
// Synchronous mode accumulates sqrt(t) per agreeing frame over a fixed
// trial and selects the heaviest target if max/mean of the weights clears
// alpha. Both are deterministic: ties always break to the lowest index.

#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "gazekb/core.hpp"
#include "gazekb/layout.hpp"

namespace gazekb {

// What the keyboard currently accepts. The center target is a command
// only at level 2 (go-back); at level 1 it holds the text boxes.
struct SelectionContext {
  bool center_selectable = false;
};

inline std::optional<Direction> agree(const ClassificationFrame& frame, SelectionContext ctx,
                                      AgreementRule rule = AgreementRule::gate) {
  const Direction lp = argmax(frame.left);
  const Direction rp = argmax(frame.right);
  std::optional<Direction> candidate;
  if (rule == AgreementRule::gate) {
    if (lp == rp) candidate = rp;
  } else if (!(lp == rp && lp != kCenter)) {
    candidate = rp;
  }
  if (candidate == kCenter && !ctx.center_selectable) return std::nullopt;
  return candidate;
}

inline void check_monotone(std::optional<std::int64_t>& last, std::int64_t t_ms) {
  if (last && t_ms <= *last)
    throw StreamError("non-monotone timestamp " + std::to_string(t_ms) + " after " + std::to_string(*last));
  last = t_ms;
}

struct AsyncState {
  EngineConfig config;
  int delta = 0;  // consecutive frames agreeing on last_selected
  std::optional<Direction> last_selected;
  std::optional<std::int64_t> last_t_ms;
};

inline std::optional<SelectionEvent> async_step(AsyncState& s, const ClassificationFrame& frame,
                                                SelectionContext ctx) {
  check_monotone(s.last_t_ms, frame.t_ms);
  const auto candidate = agree(frame, ctx, s.config.agreement);
  if (candidate && candidate == s.last_selected) {
    ++s.delta;
  } else {
    s.last_selected = candidate;
    s.delta = candidate ? 1 : 0;
  }
  if (s.delta >= s.config.dwell_frames) {
    SelectionEvent ev{command_of_direction(*s.last_selected), frame.t_ms, SelectionMode::async,
                      static_cast<double>(s.delta)};
    s.delta = 0;
    return ev;
  }
  return std::nullopt;
}

using Weights = std::array<double, kNumTargets>;

struct TrialDecision {
  Direction selected = Direction::NW;
  double ratio = 0.0;  // max / mean, in [1, 9] when any weight is positive
  bool accepted = false;
};

// nullopt when nothing agreed during the trial.
inline std::optional<TrialDecision> decide_trial(const Weights& w, double alpha) {
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0.0)) return std::nullopt;
  int best = 0;
  for (int i = 1; i < kNumTargets; ++i)
    if (w[static_cast<std::size_t>(i)] > w[static_cast<std::size_t>(best)]) best = i;
  const double ratio = w[static_cast<std::size_t>(best)] / (total / kNumTargets);
  return TrialDecision{static_cast<Direction>(best), ratio, ratio >= alpha};
}

struct SyncState {
  EngineConfig config;
  Weights weights{};
  int frame_in_trial = 0;  // frames consumed in the current trial
  int gap_remaining = 0;   // idle frames before the next trial starts
  std::optional<std::int64_t> last_t_ms;
};

struct SyncStepResult {
  std::optional<SelectionEvent> event;
  bool trial_started = false;
  bool trial_ended = false;
  std::optional<TrialDecision> decision;  // set when trial_ended
};

inline SyncStepResult sync_step(SyncState& s, const ClassificationFrame& frame, SelectionContext ctx) {
  check_monotone(s.last_t_ms, frame.t_ms);
  SyncStepResult r;
  if (s.gap_remaining > 0) {
    --s.gap_remaining;
    return r;
  }
  if (s.frame_in_trial == 0) {
    s.weights.fill(0.0);
    r.trial_started = true;
  }
  ++s.frame_in_trial;
  if (const auto d = agree(frame, ctx, s.config.agreement))
    s.weights[static_cast<std::size_t>(index_of(*d))] += std::sqrt(static_cast<double>(s.frame_in_trial));
  if (s.frame_in_trial >= s.config.trial_frames) {
    r.trial_ended = true;
    r.decision = decide_trial(s.weights, s.config.alpha);
    if (r.decision && r.decision->accepted)
      r.event = SelectionEvent{command_of_direction(r.decision->selected), frame.t_ms, SelectionMode::sync,
                               r.decision->ratio};
    s.frame_in_trial = 0;
    s.gap_remaining = s.config.inter_trial_gap_frames;
  }
  return r;
}

// One complete trial from a fresh state.
inline std::optional<SelectionEvent> sync_trial(const EngineConfig& config,
                                                std::span<const ClassificationFrame> frames,
                                                SelectionContext ctx) {
  if (frames.size() != static_cast<std::size_t>(config.trial_frames))
    throw ContractViolation("sync_trial needs exactly " + std::to_string(config.trial_frames) + " frames, got " +
                            std::to_string(frames.size()));
  SyncState s{config};
  s.gap_remaining = 0;
  std::optional<SelectionEvent> ev;
  for (const auto& f : frames) ev = sync_step(s, f, ctx).event;
  return ev;
}

// Euclidean nearest target center; relative ties break to the lowest id.
inline std::optional<CommandId> nearest_target(Point2 p, const LayoutSpec& layout, SelectionContext ctx) {
  std::optional<CommandId> best;
  double best_d2 = 0.0;
  for (const auto& [c, center] : layout.centers) {
    if (c < 1 || c > kNumTargets) continue;
    if (c == kGoBack.value() && !ctx.center_selectable) continue;
    const double dx = p.x - center.x;
    const double dy = p.y - center.y;
    const double d2 = dx * dx + dy * dy;
    if (!best || d2 < best_d2 * (1.0 - 1e-12)) {
      best = CommandId(c);
      best_d2 = d2;
    }
  }
  return best;
}

inline std::optional<CommandId> nearest_target(const GazePointFrame& p, const LayoutSpec& layout,
                                               SelectionContext ctx) {
  return nearest_target(Point2{p.x, p.y}, layout, ctx);
}

// Both eyes carry the one-hot of the nearest target, so they always agree.
// With no selectable target the eyes are made to disagree.
inline ClassificationFrame frame_from_point(const GazePointFrame& p, const LayoutSpec& layout,
                                            SelectionContext ctx) {
  ClassificationFrame f;
  f.t_ms = p.t_ms;
  if (const auto c = nearest_target(p, layout, ctx)) {
    f.left = f.right = one_hot(direction_of_command(*c));
  } else {
    f.left = one_hot(Direction::N);
    f.right = one_hot(Direction::S);
  }
  return f;
}

inline std::vector<ClassificationFrame> pointstream_to_frames(std::span<const GazePointFrame> points,
                                                              const LayoutSpec& layout, SelectionContext ctx) {
  std::vector<ClassificationFrame> out;
  out.reserve(points.size());
  std::optional<std::int64_t> last;
  for (const auto& p : points) {
    if (!is_valid(p)) throw StreamError("gaze point outside [0,1] at t_ms=" + std::to_string(p.t_ms));
    check_monotone(last, p.t_ms);
    out.push_back(frame_from_point(p, layout, ctx));
  }
  return out;
}

}  // namespace gazekb
