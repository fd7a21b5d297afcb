#pragma once

// Shared vocabulary for the gaze keyboard: the nine gaze targets, frames
// coming from a gaze source, selection events and engine configuration.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace gazekb {

inline constexpr int kNumTargets = 9;

// Raised when a caller breaks a documented precondition.
struct ContractViolation : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Raised when a frame stream is out of order or otherwise unusable.
struct StreamError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Gaze target, 0-based row-major on the 3x3 grid. Center is 4.
enum class Direction : std::uint8_t { NW = 0, N, NE, W, C, E, SW, S, SE };

inline constexpr Direction kCenter = Direction::C;

constexpr int index_of(Direction d) noexcept { return static_cast<int>(d); }

constexpr Direction direction_at(int index) {
  if (index < 0 || index >= kNumTargets) throw ContractViolation("direction index out of range");
  return static_cast<Direction>(index);
}

constexpr std::string_view name_of(Direction d) noexcept {
  constexpr std::array<std::string_view, kNumTargets> names{"NW", "N", "NE", "W", "C",
                                                            "E",  "SW", "S", "SE"};
  return names[static_cast<std::size_t>(d)];
}

// Commands C1..C9. Always 1-based; construction validates the range.
class CommandId {
 public:
  constexpr explicit CommandId(int value) : value_(value) {
    if (value < 1 || value > kNumTargets) throw ContractViolation("command id must be in 1..9");
  }
  constexpr int value() const noexcept { return value_; }
  constexpr auto operator<=>(const CommandId&) const = default;

 private:
  int value_;
};

inline constexpr CommandId kGoBack{5};
inline constexpr CommandId kDelete{9};

constexpr Direction direction_of_command(CommandId c) { return static_cast<Direction>(c.value() - 1); }
constexpr CommandId command_of_direction(Direction d) { return CommandId(index_of(d) + 1); }

inline std::string command_label(CommandId c) { return "C" + std::to_string(c.value()); }

using ProbVector = std::array<double, kNumTargets>;

struct ClassificationFrame {
  std::int64_t t_ms = 0;
  ProbVector left{};
  ProbVector right{};
  bool operator==(const ClassificationFrame&) const = default;
};

struct GazePointFrame {
  std::int64_t t_ms = 0;
  double x = 0.0;
  double y = 0.0;
  bool operator==(const GazePointFrame&) const = default;
};

inline constexpr double kNormTolerance = 1e-6;

inline bool is_probability_vector(const ProbVector& v, double tol = kNormTolerance) {
  double sum = 0.0;
  for (double p : v) {
    if (!(p >= 0.0) || !std::isfinite(p)) return false;
    sum += p;
  }
  return std::abs(sum - 1.0) <= tol;
}

inline bool is_valid(const ClassificationFrame& f) {
  return is_probability_vector(f.left) && is_probability_vector(f.right);
}

inline bool is_valid(const GazePointFrame& p) {
  return p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0;
}

// Lowest index wins ties.
inline Direction argmax(const ProbVector& v) noexcept {
  int best = 0;
  for (int i = 1; i < kNumTargets; ++i)
    if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
  return static_cast<Direction>(best);
}

inline ProbVector one_hot(Direction d) {
  ProbVector v{};
  v[static_cast<std::size_t>(index_of(d))] = 1.0;
  return v;
}

enum class SelectionMode : std::uint8_t { async, sync, direct };

constexpr std::string_view to_string(SelectionMode m) noexcept {
  switch (m) {
    case SelectionMode::async: return "async";
    case SelectionMode::sync: return "sync";
    case SelectionMode::direct: return "direct";
  }
  return "?";
}

inline SelectionMode selection_mode_from(std::string_view s) {
  if (s == "async") return SelectionMode::async;
  if (s == "sync") return SelectionMode::sync;
  if (s == "direct") return SelectionMode::direct;
  throw ContractViolation("unknown selection mode: " + std::string(s));
}

// score is the dwell count for async, the weight ratio for sync, 0 for direct.
struct SelectionEvent {
  CommandId command{1};
  std::int64_t t_ms = 0;
  SelectionMode mode = SelectionMode::async;
  double score = 0.0;
  bool operator==(const SelectionEvent&) const = default;
};

// How both eyes' argmax are combined into a candidate.
//   gate:    candidate exists only when the eyes agree (center gated by context)
//   literal: the printed condition, None when they agree on a non-center target
enum class AgreementRule : std::uint8_t { gate, literal };

struct EngineConfig {
  int dwell_frames = 30;  // async threshold
  int trial_frames = 60;  // sync trial length
  double alpha = 6.0;     // sync ratio threshold
  double frame_rate = 30.0;
  SelectionMode mode = SelectionMode::async;
  int inter_trial_gap_frames = 0;
  AgreementRule agreement = AgreementRule::gate;

  void validate() const {
    if (dwell_frames < 1) throw ContractViolation("dwell_frames must be >= 1");
    if (trial_frames < 1) throw ContractViolation("trial_frames must be >= 1");
    if (!(alpha > 0.0)) throw ContractViolation("alpha must be > 0");
    if (!(frame_rate > 0.0)) throw ContractViolation("frame_rate must be > 0");
    if (inter_trial_gap_frames < 0) throw ContractViolation("inter_trial_gap_frames must be >= 0");
    if (mode == SelectionMode::direct) throw ContractViolation("engine mode must be async or sync");
  }

  bool operator==(const EngineConfig&) const = default;
};

// Timestamp of the k-th frame (k >= 1) of a clocked stream.
inline std::int64_t frame_time_ms(std::int64_t k, double frame_rate) {
  return static_cast<std::int64_t>(std::llround(static_cast<double>(k) * 1000.0 / frame_rate));
}

}  // namespace gazekb
