#pragma once

// Two-level virtual keyboard.
//
// Level 1 shows the seven character groups plus delete (C9); the center
// holds the text boxes and selects nothing. Selecting a group opens level 2
// with that group's eight characters on the peripheral targets and go-back
// in the center. Committing a character returns to level 1.

#include <algorithm>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "gazekb/core.hpp"
#include "gazekb/layout.hpp"
#include "gazekb/selection.hpp"

namespace gazekb {

enum class FeedbackKind : std::uint8_t { highlight, letter_added, letter_deleted, level_changed, audio_cue };

inline std::string_view to_string(FeedbackKind k) {
  switch (k) {
    case FeedbackKind::highlight: return "highlight";
    case FeedbackKind::letter_added: return "letter_added";
    case FeedbackKind::letter_deleted: return "letter_deleted";
    case FeedbackKind::level_changed: return "level_changed";
    case FeedbackKind::audio_cue: return "audio_cue";
  }
  return "?";
}

struct FeedbackEvent {
  FeedbackKind kind;
  std::variant<std::monostate, CommandId, char32_t> payload;
  std::int64_t t_ms = 0;
  bool operator==(const FeedbackEvent&) const = default;
};

struct KeyboardState {
  int level = 1;
  std::optional<CommandId> active_group;  // set iff level == 2
  std::u32string typed;
  std::u32string target_text;
  bool operator==(const KeyboardState&) const = default;
};

inline KeyboardState initial_state(std::u32string target) {
  KeyboardState s;
  s.target_text = std::move(target);
  return s;
}

inline std::u32string last_five(const KeyboardState& s) {
  return s.typed.size() <= 5 ? s.typed : s.typed.substr(s.typed.size() - 5);
}

inline std::size_t common_prefix(std::u32string_view a, std::u32string_view b) {
  const auto [ia, ib] = std::mismatch(a.begin(), a.end(), b.begin(), b.end());
  return static_cast<std::size_t>(ia - a.begin());
}

inline std::u32string remaining_text(const KeyboardState& s) {
  return s.target_text.substr(common_prefix(s.typed, s.target_text));
}

inline bool is_complete(const KeyboardState& s) { return s.typed == s.target_text; }

inline SelectionContext context_of(const KeyboardState& s) { return {s.level == 2}; }

using Transition = std::pair<KeyboardState, std::vector<FeedbackEvent>>;

inline Transition apply_command(const LayoutSpec& layout, KeyboardState s, CommandId c, std::int64_t t_ms) {
  std::vector<FeedbackEvent> events;
  if (s.level == 1) {
    if (c == kDelete) {
      if (!s.typed.empty()) {
        const char32_t removed = s.typed.back();
        s.typed.pop_back();
        events.push_back({FeedbackKind::letter_deleted, removed, t_ms});
      }
    } else if (c != kGoBack && layout.groups.contains(c.value())) {
      s.level = 2;
      s.active_group = c;
      events.push_back({FeedbackKind::level_changed, c, t_ms});
    }
    return {std::move(s), std::move(events)};
  }

  if (c != kGoBack) {
    const auto& chars = layout.groups.at(s.active_group->value());
    const auto slot = slot_of_command(c);
    if (slot && *slot < chars.size()) {
      const char32_t ch = chars[*slot];
      s.typed.push_back(ch);
      events.push_back({FeedbackKind::letter_added, ch, t_ms});
      events.push_back({FeedbackKind::audio_cue, ch, t_ms});
    }
  }
  s.level = 1;
  s.active_group.reset();
  events.push_back({FeedbackKind::level_changed, c, t_ms});
  return {std::move(s), std::move(events)};
}

struct UntypeableCharacter : ContractViolation {
  explicit UntypeableCharacter(char32_t ch)
      : ContractViolation("character " + quote_char(ch) + " is not on the layout"), character(ch) {}
  char32_t character;
};

// Error-free command sequence: group then slot for each character.
inline std::vector<CommandId> commands_for_text(const LayoutSpec& layout, std::u32string_view text) {
  std::vector<CommandId> out;
  out.reserve(text.size() * 2);
  for (char32_t ch : text) {
    const auto loc = locate(layout, ch);
    if (!loc) throw UntypeableCharacter(ch);
    out.push_back(loc->group);
    out.push_back(loc->slot_command);
  }
  return out;
}

enum class CorrectionPolicy : std::uint8_t { go_back_then_retry, immediate_delete };

inline std::string_view to_string(CorrectionPolicy p) {
  return p == CorrectionPolicy::go_back_then_retry ? "go-back-then-retry" : "immediate-delete";
}

inline CorrectionPolicy correction_policy_from(std::string_view s) {
  if (s == "go-back-then-retry") return CorrectionPolicy::go_back_then_retry;
  if (s == "immediate-delete") return CorrectionPolicy::immediate_delete;
  throw ContractViolation("unknown correction policy: " + std::string(s));
}

// Next command a user pursuing target_text issues from state s; nullopt
// when done. With go_back_then_retry this is the shortest recovery path
// and doubles as the correctness oracle for metrics.
//
// immediate_delete: a user landing in the wrong group commits the slot
// they meant anyway and deletes the wrong letter afterwards.
inline std::optional<CommandId> next_command(const LayoutSpec& layout, const KeyboardState& s,
                                             CorrectionPolicy policy = CorrectionPolicy::go_back_then_retry) {
  const std::size_t good = common_prefix(s.typed, s.target_text);
  if (s.typed.size() > good) return s.level == 2 ? kGoBack : kDelete;
  if (good == s.target_text.size()) return s.level == 2 ? std::optional<CommandId>(kGoBack) : std::nullopt;
  const char32_t next = s.target_text[good];
  const auto loc = locate(layout, next);
  if (!loc) throw UntypeableCharacter(next);
  if (s.level == 1) return loc->group;
  if (s.active_group == loc->group || policy == CorrectionPolicy::immediate_delete) return loc->slot_command;
  return kGoBack;
}

}  // namespace gazekb
