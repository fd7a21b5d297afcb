#pragma once

// Gaze-direction sources: the confusion-matrix emulator standing in for a
// trained classifier, calibration statistics, and the newline-delimited
// JSON wire protocol spoken by external classifiers and the browser UI.

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

#include "gazekb/core.hpp"
#include "gazekb/keyboard.hpp"
#include "gazekb/session_log.hpp"

namespace gazekb {

// Portable uniform draws from mt19937_64 so seeded streams match on every
// standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  bool bernoulli(double p) { return uniform() < p; }
  // Uniform integer in [0, n).
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

struct ConfusionMatrixError : std::runtime_error {
  ConfusionMatrixError(int row_no, const std::string& what)
      : std::runtime_error(row_no > 0 ? "row " + std::to_string(row_no) + ": " + what : what), row(row_no) {}
  int row;  // 1-based, 0 when not row specific
};

// m[i][j]: probability that true direction i is classified as j.
class ConfusionMatrix {
 public:
  using Rows = std::array<std::array<double, kNumTargets>, kNumTargets>;

  static ConfusionMatrix identity() { return diagonal(1.0); }

  // d on the diagonal, (1 - d) spread uniformly over the other eight.
  static ConfusionMatrix diagonal(double d) {
    if (!(d >= 0.0 && d <= 1.0)) throw ConfusionMatrixError(0, "diagonal must be in [0,1]");
    Rows r{};
    for (int i = 0; i < kNumTargets; ++i)
      for (int j = 0; j < kNumTargets; ++j)
        r[i][j] = i == j ? d : (1.0 - d) / (kNumTargets - 1);
    return ConfusionMatrix(r);
  }

  static ConfusionMatrix uniform() { return diagonal(1.0 / kNumTargets); }

  // Rows must be non-negative and sum to 1 within 1e-6; rows off by more
  // than rounding error are renormalized.
  static ConfusionMatrix from_rows(Rows rows) {
    for (int i = 0; i < kNumTargets; ++i) {
      double sum = 0.0;
      for (double v : rows[i]) {
        if (!std::isfinite(v) || v < 0.0) throw ConfusionMatrixError(i + 1, "entries must be finite and non-negative");
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-6)
        throw ConfusionMatrixError(i + 1, "sums to " + std::to_string(sum) + ", expected 1");
      if (std::abs(sum - 1.0) > 1e-12)
        for (double& v : rows[i]) v /= sum;
    }
    return ConfusionMatrix(rows);
  }

  // 9 lines of 9 whitespace-separated numbers (blank lines and '#' comments skipped).
  static ConfusionMatrix parse_text(std::string_view text) {
    Rows rows{};
    int row = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      if (row >= kNumTargets) throw ConfusionMatrixError(row + 1, "more than 9 rows");
      std::istringstream ls(line);
      std::vector<double> values;
      std::string tok;
      while (ls >> tok) {
        try {
          std::size_t used = 0;
          values.push_back(std::stod(tok, &used));
          if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
          throw ConfusionMatrixError(row + 1, "not a number: \"" + tok + "\"");
        }
      }
      if (values.size() != kNumTargets)
        throw ConfusionMatrixError(row + 1, "expected 9 values, got " + std::to_string(values.size()));
      for (int j = 0; j < kNumTargets; ++j) rows[row][j] = values[static_cast<std::size_t>(j)];
      ++row;
    }
    if (row != kNumTargets) throw ConfusionMatrixError(row + 1, "expected 9 rows, got " + std::to_string(row));
    return from_rows(rows);
  }

  double operator()(Direction truth, Direction predicted) const {
    return rows_[index_of(truth)][index_of(predicted)];
  }
  const Rows& rows() const noexcept { return rows_; }

  // Draw a predicted class for the given true direction.
  Direction sample(Direction truth, Rng& rng) const {
    const auto& row = rows_[index_of(truth)];
    const double u = rng.uniform();
    double acc = 0.0;
    int last_positive = index_of(truth);
    for (int j = 0; j < kNumTargets; ++j) {
      if (row[j] <= 0.0) continue;
      acc += row[j];
      last_positive = j;
      if (u < acc) return static_cast<Direction>(j);
    }
    return static_cast<Direction>(last_positive);
  }

  std::string to_text() const {
    std::ostringstream out;
    out.precision(17);
    for (const auto& r : rows_) {
      for (int j = 0; j < kNumTargets; ++j) out << (j ? " " : "") << r[j];
      out << "\n";
    }
    return out.str();
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  explicit ConfusionMatrix(Rows r) : rows_(r) {}
  Rows rows_{};
};

inline constexpr double kEmulatorEpsilon = 1e-3;

// 1 - eps on the drawn class, eps/8 elsewhere.
inline ProbVector near_one_hot(Direction d, double eps = kEmulatorEpsilon) {
  ProbVector v;
  v.fill(eps / (kNumTargets - 1));
  v[static_cast<std::size_t>(index_of(d))] = 1.0 - eps;
  return v;
}

// Each eye draws from the true direction's row; with probability rho the
// right eye copies the left eye's draw instead of drawing independently.
inline ClassificationFrame emulate_frame(Direction truth, const ConfusionMatrix& cm, double rho, Rng& rng,
                                         std::int64_t t_ms = 0) {
  const Direction left = cm.sample(truth, rng);
  const Direction right = rng.bernoulli(rho) ? left : cm.sample(truth, rng);
  return {t_ms, near_one_hot(left), near_one_hot(right)};
}

// ---------------------------------------------------------------- calibration

struct CalibrationSet {
  std::vector<std::pair<Direction, Direction>> observations;  // (truth, predicted)

  void add(Direction truth, Direction predicted) { observations.emplace_back(truth, predicted); }

  // A frame counts by the argmax of the two eyes' averaged vectors.
  void add(Direction truth, const ClassificationFrame& f) {
    ProbVector mean{};
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] = 0.5 * (f.left[i] + f.right[i]);
    add(truth, argmax(mean));
  }
};

struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CalibrationStats {
  ConfusionMatrix matrix = ConfusionMatrix::identity();
  std::array<double, kNumTargets> per_class_accuracy{};
  std::array<std::size_t, kNumTargets> counts{};
  double overall_accuracy = 0.0;
  bool low_confidence = false;  // some class has fewer than kMinConfidentSamples
  static constexpr std::size_t kMinConfidentSamples = 30;
};

inline CalibrationStats calibration_stats(const CalibrationSet& cal) {
  std::array<std::array<std::size_t, kNumTargets>, kNumTargets> counts{};
  for (const auto& [truth, pred] : cal.observations) ++counts[index_of(truth)][index_of(pred)];
  CalibrationStats s;
  std::string missing;
  std::size_t total = 0;
  std::size_t correct = 0;
  ConfusionMatrix::Rows rows{};
  for (int i = 0; i < kNumTargets; ++i) {
    std::size_t n = 0;
    for (auto c : counts[i]) n += c;
    s.counts[i] = n;
    if (n == 0) {
      missing += (missing.empty() ? "" : ", ") + std::string(name_of(static_cast<Direction>(i)));
      continue;
    }
    for (int j = 0; j < kNumTargets; ++j) rows[i][j] = static_cast<double>(counts[i][j]) / static_cast<double>(n);
    s.per_class_accuracy[i] = rows[i][i];
    total += n;
    correct += counts[i][i];
    if (n < CalibrationStats::kMinConfidentSamples) s.low_confidence = true;
  }
  if (!missing.empty()) throw CalibrationError("no calibration observations for: " + missing);
  s.matrix = ConfusionMatrix::from_rows(rows);
  s.overall_accuracy = static_cast<double>(correct) / static_cast<double>(total);
  return s;
}

// ---------------------------------------------------------------- wire protocol
//
// Inbound, one JSON object per line:
//   {"t_ms": 33, "left": [9 floats], "right": [9 floats]}   classification frame
//   {"t_ms": 33, "x": 0.5, "y": 0.5}                         gaze / pointer point
//   {"t_ms": 40, "command": 9}                               direct (click) selection
//   {"session": "token", "role": "frames"|"events"|"both", "target": "..."}  handshake
// Outbound: {"t_ms", "kind", "payload"} records.

struct DecodeError : std::runtime_error {
  DecodeError(std::size_t pos, const std::string& what)
      : std::runtime_error("at byte " + std::to_string(pos) + ": " + what), position(pos) {}
  std::size_t position;
};

struct ClickMessage {
  std::int64_t t_ms = 0;
  CommandId command{1};
  bool operator==(const ClickMessage&) const = default;
};

struct HelloMessage {
  std::string session;
  std::string role = "both";
  std::optional<std::u32string> target;
  bool operator==(const HelloMessage&) const = default;
};

using InboundMessage = std::variant<ClassificationFrame, GazePointFrame, ClickMessage, HelloMessage>;

inline constexpr double kRenormalizeTolerance = 1e-3;

namespace detail {

inline std::size_t key_position(std::string_view text, std::string_view key) {
  const auto pos = text.find("\"" + std::string(key) + "\"");
  return pos == std::string_view::npos ? 0 : pos;
}

inline ProbVector decode_vector(const nlohmann::json& j, std::string_view text, std::string_view key) {
  const std::size_t pos = key_position(text, key);
  if (!j.contains(key)) throw DecodeError(text.size(), "missing \"" + std::string(key) + "\"");
  const auto& arr = j.at(std::string(key));
  if (!arr.is_array()) throw DecodeError(pos, std::string(key) + " must be an array");
  if (arr.size() != kNumTargets)
    throw DecodeError(pos, std::string(key) + " has " + std::to_string(arr.size()) + " entries, expected 9");
  ProbVector v{};
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!arr[i].is_number()) throw DecodeError(pos, std::string(key) + "[" + std::to_string(i) + "] is not a number");
    v[i] = arr[i].get<double>();
    if (!std::isfinite(v[i]) || v[i] < 0.0)
      throw DecodeError(pos, std::string(key) + "[" + std::to_string(i) + "] is negative or not finite");
    sum += v[i];
  }
  if (std::abs(sum - 1.0) > kRenormalizeTolerance)
    throw DecodeError(pos, std::string(key) + " sums to " + std::to_string(sum) + ", not a probability vector");
  if (std::abs(sum - 1.0) > kNormTolerance)
    for (double& p : v) p /= sum;
  return v;
}

inline std::int64_t decode_time(const nlohmann::json& j, std::string_view text) {
  if (!j.contains("t_ms")) throw DecodeError(text.size(), "missing \"t_ms\"");
  const auto& t = j.at("t_ms");
  if (!t.is_number_integer()) throw DecodeError(key_position(text, "t_ms"), "t_ms must be an integer");
  return t.get<std::int64_t>();
}

}  // namespace detail

// Stateless decode of one message (no ordering checks).
inline InboundMessage decode_message(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DecodeError(e.byte > 0 ? e.byte - 1 : 0, "malformed JSON");
  }
  if (!j.is_object()) throw DecodeError(0, "message must be a JSON object");
  if (j.contains("session")) {
    HelloMessage h;
    if (!j["session"].is_string() || j["session"].get<std::string>().empty())
      throw DecodeError(detail::key_position(text, "session"), "session token must be a non-empty string");
    h.session = j["session"].get<std::string>();
    h.role = j.value("role", std::string("both"));
    if (h.role != "frames" && h.role != "events" && h.role != "both")
      throw DecodeError(detail::key_position(text, "role"), "role must be frames, events or both");
    if (j.contains("target")) {
      try {
        h.target = utf8::decode(j["target"].get<std::string>());
      } catch (const std::exception&) {
        throw DecodeError(detail::key_position(text, "target"), "target must be a UTF-8 string");
      }
    }
    return h;
  }
  const std::int64_t t = detail::decode_time(j, text);
  if (j.contains("left") || j.contains("right"))
    return ClassificationFrame{t, detail::decode_vector(j, text, "left"), detail::decode_vector(j, text, "right")};
  if (j.contains("x") || j.contains("y")) {
    const auto pos = detail::key_position(text, j.contains("x") ? "x" : "y");
    if (!j.contains("x") || !j.contains("y") || !j["x"].is_number() || !j["y"].is_number())
      throw DecodeError(pos, "point needs numeric x and y");
    GazePointFrame p{t, j["x"].get<double>(), j["y"].get<double>()};
    if (!is_valid(p)) throw DecodeError(pos, "point outside [0,1]");
    return p;
  }
  if (j.contains("command")) {
    const auto pos = detail::key_position(text, "command");
    if (!j["command"].is_number_integer()) throw DecodeError(pos, "command must be an integer");
    const int c = j["command"].get<int>();
    if (c < 1 || c > kNumTargets) throw DecodeError(pos, "command must be in 1..9");
    return ClickMessage{t, CommandId(c)};
  }
  throw DecodeError(0, "unrecognised message");
}

inline std::string encode_frame(const ClassificationFrame& f) {
  return nlohmann::json{{"t_ms", f.t_ms}, {"left", to_json(f.left)}, {"right", to_json(f.right)}}.dump();
}

inline std::string encode_point(const GazePointFrame& p) {
  return nlohmann::json{{"t_ms", p.t_ms}, {"x", p.x}, {"y", p.y}}.dump();
}

inline ClassificationFrame decode_frame(std::string_view text) {
  auto msg = decode_message(text);
  if (auto* f = std::get_if<ClassificationFrame>(&msg)) return *f;
  throw DecodeError(0, "not a classification frame");
}

// Per-connection decoder: rejects timestamps that do not increase.
class FrameDecoder {
 public:
  InboundMessage next(std::string_view text) {
    auto msg = decode_message(text);
    const auto t = std::visit(
        [](const auto& m) -> std::optional<std::int64_t> {
          if constexpr (std::is_same_v<std::decay_t<decltype(m)>, HelloMessage>) return std::nullopt;
          else return m.t_ms;
        },
        msg);
    if (t) {
      // Clicks may share a timestamp with the preceding frame.
      const bool strict = !std::holds_alternative<ClickMessage>(msg);
      if (last_ && (strict ? *t <= *last_ : *t < *last_))
        throw DecodeError(detail::key_position(text, "t_ms"),
                          "non-monotone timestamp " + std::to_string(*t) + " after " + std::to_string(*last_));
      last_ = t;
    }
    return msg;
  }
  void reset() { last_.reset(); }

 private:
  std::optional<std::int64_t> last_;
};

// ---------------------------------------------------------------- outbound events

inline nlohmann::json event_message(std::int64_t t_ms, std::string_view kind, nlohmann::json payload) {
  return {{"t_ms", t_ms}, {"kind", std::string(kind)}, {"payload", std::move(payload)}};
}

inline nlohmann::json to_message(const FeedbackEvent& e) {
  nlohmann::json payload = nlohmann::json::object();
  if (const auto* c = std::get_if<CommandId>(&e.payload)) payload["command"] = c->value();
  else if (const auto* ch = std::get_if<char32_t>(&e.payload)) payload["char"] = char_string(*ch);
  else if (e.kind == FeedbackKind::highlight) payload["command"] = nullptr;
  return event_message(e.t_ms, to_string(e.kind), payload);
}

inline nlohmann::json to_message(const SelectionEvent& s) {
  return event_message(s.t_ms, "selection", selection_payload(s));
}

// Snapshot so a UI can render without any keyboard logic of its own.
inline nlohmann::json state_message(const KeyboardState& k, const LayoutSpec& layout, std::int64_t t_ms,
                                    double progress, std::string_view mode) {
  nlohmann::json tiles = nlohmann::json::object();
  if (k.level == 1) {
    for (const auto& [g, chars] : layout.groups) {
      auto arr = nlohmann::json::array();
      for (char32_t ch : chars) arr.push_back(char_string(ch));
      tiles["C" + std::to_string(g)] = arr;
    }
  } else {
    const auto& chars = layout.groups.at(k.active_group->value());
    for (std::size_t s = 0; s < chars.size() && s < kSlotCommands.size(); ++s)
      tiles["C" + std::to_string(kSlotCommands[s])] = char_string(chars[s]);
  }
  return event_message(t_ms, "state",
                       {{"level", k.level},
                        {"active_group", k.active_group ? nlohmann::json(k.active_group->value()) : nlohmann::json(nullptr)},
                        {"typed", utf8::encode(k.typed)},
                        {"remaining", utf8::encode(remaining_text(k))},
                        {"last_five", utf8::encode(last_five(k))},
                        {"tiles", tiles},
                        {"progress", progress},
                        {"mode", std::string(mode)}});
}

}  // namespace gazekb
