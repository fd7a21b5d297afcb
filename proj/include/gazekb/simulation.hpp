#pragma once

// Monte-Carlo typing experiment. A simulated user follows the shortest
// command path to the sentence, looking at each target after a reaction
// delay; frames pass through the confusion-matrix emulator (or become
// gaze points) and the same Session the live server uses. Wrong feedback
// is corrected according to the user's correction policy.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gazekb/gateway.hpp"
#include "gazekb/metrics.hpp"
#include "gazekb/session.hpp"

namespace gazekb {

enum class Modality : std::uint8_t { classification, point };

inline std::string_view to_string(Modality m) { return m == Modality::classification ? "classification" : "point"; }

inline Modality modality_from(std::string_view s) {
  if (s == "classification" || s == "webcam") return Modality::classification;
  if (s == "point" || s == "tracker" || s == "mouse") return Modality::point;
  throw ContractViolation("unknown modality: " + std::string(s));
}

struct UserModel {
  int reaction_frames = 10;       // gaze-shift latency after each selection
  double fixation_jitter = 0.05;  // per-frame chance of glancing at a neighbour
  CorrectionPolicy correction = CorrectionPolicy::go_back_then_retry;

  void validate() const {
    if (reaction_frames < 0) throw ContractViolation("reaction_frames must be >= 0");
    if (!(fixation_jitter >= 0.0 && fixation_jitter < 1.0)) throw ContractViolation("fixation_jitter must be in [0,1)");
  }
};

struct ExperimentConfig {
  EngineConfig engine;
  Modality modality = Modality::classification;
  ConfusionMatrix confusion = ConfusionMatrix::diagonal(0.9964);
  double eye_correlation = 0.8;
  UserModel user;
  int n_virtual_users = 20;
  std::uint64_t seed = 1;
  LayoutSpec layout = default_layout();
  std::u32string sentence{kTaskSentence};
  std::int64_t frame_budget = 1'000'000;

  void validate() const {
    engine.validate();
    user.validate();
    if (n_virtual_users < 1) throw ContractViolation("n_virtual_users must be >= 1");
    if (!(eye_correlation >= 0.0 && eye_correlation <= 1.0)) throw ContractViolation("eye_correlation must be in [0,1]");
    if (frame_budget < 1) throw ContractViolation("frame_budget must be >= 1");
  }
};

// Grid neighbours (8-connected) of a target.
inline std::vector<Direction> neighbours(Direction d) {
  std::vector<Direction> out;
  const int r = index_of(d) / 3;
  const int c = index_of(d) % 3;
  for (int dr = -1; dr <= 1; ++dr)
    for (int dc = -1; dc <= 1; ++dc) {
      if (dr == 0 && dc == 0) continue;
      const int rr = r + dr;
      const int cc = c + dc;
      if (rr >= 0 && rr < 3 && cc >= 0 && cc < 3) out.push_back(static_cast<Direction>(rr * 3 + cc));
    }
  return out;
}

// Mid-saccade: the eyes disagree, so no evidence accrues for any target.
inline ClassificationFrame saccade_frame(std::int64_t t_ms) {
  return {t_ms, near_one_hot(Direction::N), near_one_hot(Direction::S)};
}

namespace detail {

class SimulatedUser {
 public:
  SimulatedUser(const ExperimentConfig& cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {}

  // Called whenever the keyboard state changes (and at the start).
  void replan(const KeyboardState& kb) {
    plan_ = next_command(cfg_.layout, kb, cfg_.user.correction);
    reaction_left_ = cfg_.user.reaction_frames;
    gaze_from_ = gaze_;
  }

  bool done() const { return !plan_.has_value(); }

  // The fixated direction this frame, or nullopt while in transit.
  std::optional<Direction> fixation() {
    if (reaction_left_ > 0) return std::nullopt;
    Direction d = direction_of_command(*plan_);
    if (cfg_.user.fixation_jitter > 0.0 && rng_.bernoulli(cfg_.user.fixation_jitter)) {
      const auto nb = neighbours(d);
      d = nb[rng_.below(nb.size())];
    }
    return d;
  }

  ClassificationFrame classification_frame(std::int64_t t_ms) {
    const auto d = fixation();
    if (reaction_left_ > 0) --reaction_left_;
    if (!d) return saccade_frame(t_ms);
    return emulate_frame(*d, cfg_.confusion, cfg_.eye_correlation, rng_, t_ms);
  }

  // Transit moves the gaze linearly towards the next target; fixations land
  // on the center of the (possibly misclassified) fixated cell.
  GazePointFrame point_frame(std::int64_t t_ms) {
    const int total = cfg_.user.reaction_frames;
    const Point2 goal = center_of(direction_of_command(*plan_));
    if (reaction_left_ > 0) {
      const double f = static_cast<double>(total - reaction_left_ + 1) / (total + 1);
      gaze_ = {gaze_from_.x + f * (goal.x - gaze_from_.x), gaze_from_.y + f * (goal.y - gaze_from_.y)};
      --reaction_left_;
    } else {
      const Direction d = *fixation();
      gaze_ = center_of(cfg_.confusion.sample(d, rng_));
    }
    return {t_ms, std::clamp(gaze_.x, 0.0, 1.0), std::clamp(gaze_.y, 0.0, 1.0)};
  }

 private:
  Point2 center_of(Direction d) const {
    const auto it = cfg_.layout.centers.find(command_of_direction(d).value());
    return it != cfg_.layout.centers.end() ? it->second : grid_center(d);
  }

  const ExperimentConfig& cfg_;
  Rng rng_;
  std::optional<CommandId> plan_;
  int reaction_left_ = 0;
  Point2 gaze_{0.5, 0.5};
  Point2 gaze_from_{0.5, 0.5};
};

}  // namespace detail

inline LogHeader experiment_header(const ExperimentConfig& cfg, std::u32string_view sentence, std::uint64_t seed) {
  LogHeader h;
  h.config = cfg.engine;
  h.layout = cfg.layout;
  h.target_text = std::u32string(sentence);
  h.source = "simulation";
  h.seed = seed;
  h.extra = {{"modality", std::string(to_string(cfg.modality))},
             {"eye_correlation", cfg.eye_correlation},
             {"reaction_frames", cfg.user.reaction_frames},
             {"fixation_jitter", cfg.user.fixation_jitter},
             {"correction_policy", std::string(to_string(cfg.user.correction))}};
  return h;
}

// One simulated participant typing `sentence`. Ends when the sentence is
// typed or the frame budget runs out (log flagged incomplete).
inline SessionLog run_session(const ExperimentConfig& cfg, std::u32string_view sentence, std::uint64_t seed) {
  cfg.validate();
  commands_for_text(cfg.layout, sentence);  // throws on untypeable characters
  Session session(experiment_header(cfg, sentence, seed));
  detail::SimulatedUser user(cfg, seed);
  user.replan(session.keyboard());
  std::int64_t t = 0;
  for (std::int64_t k = 1; k <= cfg.frame_budget && !session.closed() && !user.done(); ++k) {
    t = frame_time_ms(k, cfg.engine.frame_rate);
    const StepResult r = cfg.modality == Modality::classification ? session.on_frame(user.classification_frame(t))
                                                                   : session.on_point(user.point_frame(t));
    if (r.selection && !session.closed()) user.replan(session.keyboard());
  }
  if (!session.closed()) session.finish(t, "frame-budget");
  return std::move(session).release_log();
}

struct SessionOutcome {
  std::size_t user = 0;
  std::uint64_t seed = 0;
  SessionReport report;
  std::optional<SessionLog> log;
};

struct ExperimentReport {
  std::vector<SessionOutcome> sessions;
  ReportSummary summary;
  std::map<int, std::size_t> group_usage;  // group command -> selections on the error-free path
};

inline std::uint64_t user_seed(std::uint64_t experiment_seed, std::size_t user) {
  return splitmix64(experiment_seed ^ splitmix64(static_cast<std::uint64_t>(user) + 1));
}

inline std::map<int, std::size_t> group_usage(const LayoutSpec& layout, std::u32string_view sentence) {
  std::map<int, std::size_t> usage;
  for (int g : kGroupCommands) usage[g] = 0;
  const auto cmds = commands_for_text(layout, sentence);
  for (std::size_t i = 0; i < cmds.size(); i += 2) ++usage[cmds[i].value()];
  return usage;
}

// n_virtual_users independent seeded sessions, run on `threads` workers
// (0 = hardware concurrency). Results do not depend on the thread count.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, std::u32string_view sentence,
                                       bool keep_logs = true, unsigned threads = 0) {
  cfg.validate();
  ExperimentReport out;
  out.group_usage = group_usage(cfg.layout, sentence);
  const auto n = static_cast<std::size_t>(cfg.n_virtual_users);
  out.sessions.resize(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        auto& o = out.sessions[i];
        o.user = i;
        o.seed = user_seed(cfg.seed, i);
        auto log = run_session(cfg, sentence, o.seed);
        o.report = session_report(log);
        if (keep_logs) o.log = std::move(log);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<SessionReport> reports;
  for (const auto& s : out.sessions) reports.push_back(s.report);
  out.summary = summarize(reports);
  return out;
}

// ---------------------------------------------------------------- config files

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline ConfusionMatrix confusion_from_json(const nlohmann::json& j, const std::filesystem::path& base) {
  if (j.is_number()) return ConfusionMatrix::diagonal(j.get<double>());
  if (j.contains("diagonal")) return ConfusionMatrix::diagonal(j.at("diagonal").get<double>());
  if (j.contains("file")) {
    std::filesystem::path p = j.at("file").get<std::string>();
    if (p.is_relative()) p = base / p;
    try {
      return ConfusionMatrix::parse_text(read_file(p));
    } catch (const ConfusionMatrixError& e) {
      throw ConfigError(p.string() + ": " + e.what());
    }
  }
  if (j.contains("matrix")) {
    ConfusionMatrix::Rows rows{};
    const auto& m = j.at("matrix");
    if (!m.is_array() || m.size() != kNumTargets) throw ConfusionMatrixError(0, "matrix must have 9 rows");
    for (int i = 0; i < kNumTargets; ++i) {
      if (!m[i].is_array() || m[i].size() != kNumTargets) throw ConfusionMatrixError(i + 1, "expected 9 values");
      for (int k = 0; k < kNumTargets; ++k) rows[i][k] = m[i][k].get<double>();
    }
    return ConfusionMatrix::from_rows(rows);
  }
  throw ConfigError("confusion must be a number, {\"diagonal\"}, {\"file\"} or {\"matrix\"}");
}

// JSON experiment description; relative paths resolve against `base`.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base) {
  try {
    ExperimentConfig c;
    if (j.contains("engine")) c.engine = engine_config_from_json(j.at("engine"));
    if (j.contains("mode")) c.engine.mode = selection_mode_from(j.at("mode").get<std::string>());
    if (j.contains("modality")) c.modality = modality_from(j.at("modality").get<std::string>());
    if (j.contains("confusion")) c.confusion = confusion_from_json(j.at("confusion"), base);
    c.eye_correlation = j.value("eye_correlation", c.eye_correlation);
    if (j.contains("user")) {
      const auto& u = j.at("user");
      c.user.reaction_frames = u.value("reaction_frames", c.user.reaction_frames);
      c.user.fixation_jitter = u.value("fixation_jitter", c.user.fixation_jitter);
      if (u.contains("correction_policy"))
        c.user.correction = correction_policy_from(u.at("correction_policy").get<std::string>());
    }
    c.n_virtual_users = j.value("n_virtual_users", c.n_virtual_users);
    c.seed = j.value("seed", c.seed);
    c.frame_budget = j.value("frame_budget", c.frame_budget);
    if (j.contains("sentence")) c.sentence = utf8::decode(j.at("sentence").get<std::string>());
    if (j.contains("layout")) {
      std::filesystem::path p = j.at("layout").get<std::string>();
      if (p.is_relative()) p = base / p;
      c.layout = parse_layout(read_file(p));
    }
    c.validate();
    if (auto v = validate_layout(c.layout, c.sentence); !v.empty())
      throw ConfigError("layout invalid: " + std::string(to_string(v.front().kind)) + " " + v.front().detail);
    return c;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j, path.parent_path());
}

}  // namespace gazekb
