#pragma once

// Human-readable and CSV renderings of session reports. The table mirrors
// the usual typing-performance layout: speed, letter-level ITR, command-level
// ITR, one row per session and a mean ± stddev footer over complete ones.

#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gazekb/metrics.hpp"

namespace gazekb {

struct NamedReport {
  std::string name;
  SessionReport report;
};

namespace detail {
inline std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}
inline std::string pm(const MeanStd& m) { return fmt("%.2f ± %.2f", m.mean, m.stddev); }
}  // namespace detail

inline std::string format_table(std::span<const NamedReport> rows) {
  std::string out = detail::fmt("%-32s %14s %18s %15s %9s %7s %7s %9s\n", "session", "Speed (TER)",
                                "ITR_letter", "ITR_com", "commands", "P_com", "P_let", "minutes");
  out += detail::fmt("%-32s %14s %18s %15s\n", "", "(letters/min)", "(bits/min)", "(bits/min)");
  std::vector<SessionReport> reports;
  std::vector<std::string> incomplete;
  for (const auto& r : rows) {
    reports.push_back(r.report);
    if (!r.report.complete) incomplete.push_back(r.name);
    out += detail::fmt("%-32s %14.2f %18.2f %15.2f %9zu %7.4f %7.4f %9.3f%s\n", r.name.c_str(), r.report.speed,
                       r.report.itr_letter, r.report.itr_com, r.report.commands_issued, r.report.command_accuracy,
                       r.report.letter_accuracy, r.report.duration_min, r.report.complete ? "" : "  (incomplete)");
  }
  const auto s = summarize(reports);
  out += detail::fmt("%-32s %14s %18s %15s\n", ("mean ± sd (n=" + std::to_string(s.complete) + ")").c_str(),
                     detail::pm(s.speed).c_str(), detail::pm(s.itr_letter).c_str(), detail::pm(s.itr_com).c_str());
  if (!incomplete.empty()) {
    out += "excluded (incomplete):";
    for (const auto& n : incomplete) out += " " + n;
    out += "\n";
  }
  out += "accuracy convention: a command is correct iff it is the next command on the shortest path\n"
         "(including shortest recovery) from the state it was issued in.\n";
  return out;
}

inline std::string format_csv(std::span<const NamedReport> rows) {
  std::string out =
      "session,complete,speed_letters_per_min,itr_letter_bits_per_min,itr_com_bits_per_min,commands,"
      "p_com,p_let,duration_min\n";
  for (const auto& r : rows)
    out += detail::fmt("%s,%d,%.6f,%.6f,%.6f,%zu,%.6f,%.6f,%.6f\n", r.name.c_str(), r.report.complete ? 1 : 0,
                       r.report.speed, r.report.itr_letter, r.report.itr_com, r.report.commands_issued,
                       r.report.command_accuracy, r.report.letter_accuracy, r.report.duration_min);
  return out;
}

inline nlohmann::json to_json(const MeanStd& m) { return {{"mean", m.mean}, {"stddev", m.stddev}, {"n", m.n}}; }

inline nlohmann::json to_json(const ReportSummary& s) {
  return {{"speed", to_json(s.speed)},
          {"itr_letter", to_json(s.itr_letter)},
          {"itr_com", to_json(s.itr_com)},
          {"command_accuracy", to_json(s.command_accuracy)},
          {"letter_accuracy", to_json(s.letter_accuracy)},
          {"commands", to_json(s.commands)},
          {"duration_min", to_json(s.duration_min)},
          {"complete", s.complete},
          {"incomplete", s.incomplete}};
}

}  // namespace gazekb
