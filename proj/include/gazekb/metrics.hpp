#pragma once

// Typing performance from session logs: text entry rate, Wolpaw
// information transfer rate at command level (N = 9) and letter level
// (N = 56), plus SUS and raw NASA-TLX questionnaire scoring.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gazekb/keyboard.hpp"
#include "gazekb/session_log.hpp"

namespace gazekb {

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

inline constexpr int kCommandAlphabet = kNumTargets;
inline constexpr int kLetterAlphabet = static_cast<int>(kLayoutCharacters);

// Bits per selection with N alternatives at accuracy P. Zero at or below
// chance.
inline double wolpaw_bits(int n, double p) {
  if (n < 2) throw DomainError("wolpaw_bits needs at least 2 alternatives");
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("accuracy must be in [0,1]");
  const double nn = n;
  if (p <= 1.0 / nn) return 0.0;
  double bits = std::log2(nn);
  if (p > 0.0) bits += p * std::log2(p);
  if (p < 1.0) bits += (1.0 - p) * std::log2((1.0 - p) / (nn - 1.0));
  return bits;
}

struct SessionReport {
  double speed = 0.0;          // letters/min
  double itr_letter = 0.0;     // bits/min
  double itr_com = 0.0;        // bits/min
  double commands_per_min = 0.0;
  std::size_t commands_issued = 0;
  std::size_t correct_commands = 0;
  std::size_t letters_added = 0;
  std::size_t correct_letters = 0;
  double command_accuracy = 0.0;  // P_com
  double letter_accuracy = 0.0;   // P_let
  double duration_min = 0.0;
  bool complete = false;
};

// A selection counts as correct when it is the next command on the shortest
// error-free (or shortest recovery) path from the keyboard state it was
// issued in. A letter counts as correct when it extends the correct prefix.
inline SessionReport session_report(const SessionLog& log) {
  SessionReport r;
  const auto& layout = log.header.layout;
  KeyboardState state = initial_state(log.header.target_text);
  for (const auto& ev : log.events) {
    if (ev.kind != LogKind::selection) continue;
    const auto& sel = std::get<SelectionEvent>(ev.payload);
    ++r.commands_issued;
    std::optional<CommandId> oracle;
    try {
      oracle = next_command(layout, state);
    } catch (const UntypeableCharacter&) {
    }
    if (oracle == sel.command) ++r.correct_commands;
    const std::size_t good = common_prefix(state.typed, state.target_text);
    const bool prefix_intact = good == state.typed.size();
    auto [next, events] = apply_command(layout, state, sel.command, sel.t_ms);
    for (const auto& e : events) {
      if (e.kind != FeedbackKind::letter_added) continue;
      ++r.letters_added;
      const char32_t ch = std::get<char32_t>(e.payload);
      if (prefix_intact && good < state.target_text.size() && state.target_text[good] == ch) ++r.correct_letters;
    }
    state = std::move(next);
  }

  const std::int64_t start = log.events.empty() ? 0 : log.events.front().t_ms;
  const std::int64_t stop = log.events.empty() ? 0 : log.events.back().t_ms;
  r.duration_min = static_cast<double>(stop - start) / 60000.0;
  r.complete = log.complete();

  r.command_accuracy = r.commands_issued ? static_cast<double>(r.correct_commands) / r.commands_issued : 0.0;
  r.letter_accuracy = r.letters_added ? static_cast<double>(r.correct_letters) / r.letters_added : 0.0;
  if (r.duration_min > 0.0) {
    const std::size_t net_letters =
        r.complete ? log.header.target_text.size() : common_prefix(state.typed, state.target_text);
    r.speed = static_cast<double>(net_letters) / r.duration_min;
    r.commands_per_min = static_cast<double>(r.commands_issued) / r.duration_min;
    r.itr_com = r.commands_per_min * wolpaw_bits(kCommandAlphabet, r.command_accuracy);
    r.itr_letter = r.speed * wolpaw_bits(kLetterAlphabet, r.letter_accuracy);
  }
  return r;
}

// System Usability Scale: ten contributions already adjusted to 0..4.
inline double sus_score(std::span<const int> responses) {
  if (responses.size() != 10) throw DomainError("SUS needs exactly 10 responses");
  int sum = 0;
  for (int v : responses) {
    if (v < 0 || v > 4) throw DomainError("SUS responses must be in 0..4");
    sum += v;
  }
  return sum * 2.5;
}

// Raw (unweighted) NASA-TLX over the six subscales.
inline double tlx_score(std::span<const double> subscales) {
  if (subscales.size() != 6) throw DomainError("NASA-TLX needs exactly 6 subscales");
  double sum = 0.0;
  for (double v : subscales) {
    if (!(v >= 0.0 && v <= 100.0)) throw DomainError("NASA-TLX subscales must be in 0..100");
    sum += v;
  }
  return sum / 6.0;
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for fewer than 2 values
  std::size_t n = 0;
};

inline MeanStd mean_std(std::span<const double> xs) {
  MeanStd m;
  m.n = xs.size();
  if (xs.empty()) return m;
  m.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return m;
}

struct ReportSummary {
  MeanStd speed, itr_letter, itr_com, command_accuracy, letter_accuracy, commands, duration_min;
  std::size_t complete = 0;
  std::size_t incomplete = 0;
};

// Aggregates over complete sessions only.
inline ReportSummary summarize(std::span<const SessionReport> reports) {
  std::vector<double> speed, il, ic, pc, pl, cmd, dur;
  ReportSummary s;
  for (const auto& r : reports) {
    if (!r.complete) {
      ++s.incomplete;
      continue;
    }
    ++s.complete;
    speed.push_back(r.speed);
    il.push_back(r.itr_letter);
    ic.push_back(r.itr_com);
    pc.push_back(r.command_accuracy);
    pl.push_back(r.letter_accuracy);
    cmd.push_back(static_cast<double>(r.commands_issued));
    dur.push_back(r.duration_min);
  }
  s.speed = mean_std(speed);
  s.itr_letter = mean_std(il);
  s.itr_com = mean_std(ic);
  s.command_accuracy = mean_std(pc);
  s.letter_accuracy = mean_std(pl);
  s.commands = mean_std(cmd);
  s.duration_min = mean_std(dur);
  return s;
}

}  // namespace gazekb
