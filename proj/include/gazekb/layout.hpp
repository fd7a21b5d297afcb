#pragma once

// Keyboard layout: which eight characters sit behind each group command,
// and where the nine targets are on screen (normalized coordinates).

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "gazekb/core.hpp"
#include "gazekb/utf8.hpp"

namespace gazekb {

inline constexpr std::array<int, 7> kGroupCommands{1, 2, 3, 4, 6, 7, 8};
// Level-2 slot k (0..7) is reached by this command; center stays go-back.
inline constexpr std::array<int, 8> kSlotCommands{1, 2, 3, 4, 6, 7, 8, 9};
inline constexpr std::size_t kGroupSize = 8;
inline constexpr std::size_t kLayoutCharacters = 56;
inline constexpr int kSpaceGroup = 7;

inline constexpr std::u32string_view kTaskSentence = U"Painting which landform";

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

struct LayoutSpec {
  std::string version;
  std::map<int, std::vector<char32_t>> groups;  // keyed by command value
  std::map<int, Point2> centers;                // keyed by command value
  bool operator==(const LayoutSpec&) const = default;
};

inline Point2 grid_center(Direction d) {
  const int i = index_of(d);
  return {(2.0 * (i % 3) + 1.0) / 6.0, (2.0 * (i / 3) + 1.0) / 6.0};
}

// 24 case pairs in alphabet blocks of four (Q and Z left out so 56 fit),
// punctuation and space in C7.
inline LayoutSpec default_layout() {
  LayoutSpec l;
  l.version = "gazekb-default-1";
  const std::u32string letters = U"ABCDEFGHIJKLMNOPRSTUVWXY";
  const std::array<int, 6> letter_groups{1, 2, 3, 4, 6, 8};
  for (std::size_t g = 0; g < letter_groups.size(); ++g) {
    std::vector<char32_t> chars;
    for (std::size_t k = 0; k < 4; ++k) {
      const char32_t upper = letters[g * 4 + k];
      chars.push_back(upper);
      chars.push_back(upper - U'A' + U'a');
    }
    l.groups[letter_groups[g]] = std::move(chars);
  }
  l.groups[kSpaceGroup] = {U' ', U'.', U',', U'?', U'!', U'-', U'/', U'\''};
  for (int c = 1; c <= kNumTargets; ++c) l.centers[c] = grid_center(direction_of_command(CommandId(c)));
  return l;
}

struct CharLocation {
  CommandId group;
  std::size_t slot;  // 0..7
  CommandId slot_command;
};

inline CommandId slot_command(std::size_t slot) {
  if (slot >= kSlotCommands.size()) throw ContractViolation("slot index out of range");
  return CommandId(kSlotCommands[slot]);
}

// Inverse of slot_command; nullopt for go-back.
inline std::optional<std::size_t> slot_of_command(CommandId c) {
  for (std::size_t k = 0; k < kSlotCommands.size(); ++k)
    if (kSlotCommands[k] == c.value()) return k;
  return std::nullopt;
}

// First occurrence in group order, then slot order.
inline std::optional<CharLocation> locate(const LayoutSpec& layout, char32_t ch) {
  for (const auto& [g, chars] : layout.groups) {
    for (std::size_t k = 0; k < chars.size() && k < kSlotCommands.size(); ++k)
      if (chars[k] == ch && g >= 1 && g <= kNumTargets) return CharLocation{CommandId(g), k, slot_command(k)};
  }
  return std::nullopt;
}

enum class ViolationKind {
  missing_group,
  unexpected_group,
  wrong_group_size,
  duplicate_character,
  wrong_character_count,
  missing_space,
  unreachable_character,
  missing_center,
  center_out_of_range,
};

struct Violation {
  ViolationKind kind;
  std::string detail;
};

inline std::string_view to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::missing_group: return "missing-group";
    case ViolationKind::unexpected_group: return "unexpected-group";
    case ViolationKind::wrong_group_size: return "wrong-group-size";
    case ViolationKind::duplicate_character: return "duplicate-character";
    case ViolationKind::wrong_character_count: return "wrong-character-count";
    case ViolationKind::missing_space: return "missing-space";
    case ViolationKind::unreachable_character: return "unreachable-character";
    case ViolationKind::missing_center: return "missing-center";
    case ViolationKind::center_out_of_range: return "center-out-of-range";
  }
  return "?";
}

inline std::string quote_char(char32_t ch) {
  std::string s = "'";
  utf8::append(s, ch);
  return s + "'";
}

// Empty iff the layout is usable for typing `sentence`.
inline std::vector<Violation> validate_layout(const LayoutSpec& layout,
                                              std::u32string_view sentence = kTaskSentence) {
  std::vector<Violation> out;
  for (int g : kGroupCommands)
    if (!layout.groups.contains(g)) out.push_back({ViolationKind::missing_group, "C" + std::to_string(g)});
  for (const auto& [g, chars] : layout.groups) {
    const bool expected = std::find(kGroupCommands.begin(), kGroupCommands.end(), g) != kGroupCommands.end();
    if (!expected) {
      out.push_back({ViolationKind::unexpected_group,
                     "C" + std::to_string(g) + (g == 5 || g == 9 ? " is reserved" : " is not a group command")});
      continue;
    }
    if (chars.size() != kGroupSize)
      out.push_back({ViolationKind::wrong_group_size,
                     "C" + std::to_string(g) + " has " + std::to_string(chars.size()) + " characters"});
  }

  std::map<char32_t, int> first_group;
  std::set<char32_t> distinct;
  for (const auto& [g, chars] : layout.groups) {
    for (char32_t ch : chars) {
      if (auto [it, inserted] = first_group.emplace(ch, g); !inserted)
        out.push_back({ViolationKind::duplicate_character,
                       quote_char(ch) + " in C" + std::to_string(it->second) + " and C" + std::to_string(g)});
      distinct.insert(ch);
    }
  }
  if (distinct.size() != kLayoutCharacters)
    out.push_back({ViolationKind::wrong_character_count,
                   std::to_string(distinct.size()) + " distinct characters, expected 56"});

  if (auto it = layout.groups.find(kSpaceGroup);
      it == layout.groups.end() || std::find(it->second.begin(), it->second.end(), U' ') == it->second.end())
    out.push_back({ViolationKind::missing_space, "C7 does not contain the space character"});

  std::set<char32_t> reported;
  for (char32_t ch : sentence)
    if (!distinct.contains(ch) && reported.insert(ch).second)
      out.push_back({ViolationKind::unreachable_character, quote_char(ch) + " of the task sentence"});

  for (int c = 1; c <= kNumTargets; ++c) {
    auto it = layout.centers.find(c);
    if (it == layout.centers.end()) {
      out.push_back({ViolationKind::missing_center, "C" + std::to_string(c)});
      continue;
    }
    const auto [x, y] = it->second;
    if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0))
      out.push_back({ViolationKind::center_out_of_range, "C" + std::to_string(c)});
  }
  return out;
}

struct LayoutError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline nlohmann::json to_json(const LayoutSpec& l) {
  nlohmann::json j;
  j["version"] = l.version;
  j["groups"] = nlohmann::json::object();
  for (const auto& [g, chars] : l.groups) {
    auto arr = nlohmann::json::array();
    for (char32_t ch : chars) {
      std::string s;
      utf8::append(s, ch);
      arr.push_back(s);
    }
    j["groups"]["C" + std::to_string(g)] = arr;
  }
  j["centers"] = nlohmann::json::object();
  for (const auto& [c, p] : l.centers) j["centers"]["C" + std::to_string(c)] = {p.x, p.y};
  return j;
}

inline int parse_command_key(const std::string& key) {
  if (key.size() == 2 && key[0] == 'C' && key[1] >= '1' && key[1] <= '9') return key[1] - '0';
  throw LayoutError("bad command key \"" + key + "\" (expected C1..C9)");
}

inline LayoutSpec layout_from_json(const nlohmann::json& j) {
  try {
    LayoutSpec l;
    l.version = j.at("version").get<std::string>();
    for (const auto& [key, arr] : j.at("groups").items()) {
      std::vector<char32_t> chars;
      for (const auto& s : arr) chars.push_back(utf8::decode_single(s.get<std::string>()));
      l.groups[parse_command_key(key)] = std::move(chars);
    }
    for (const auto& [key, xy] : j.at("centers").items()) {
      if (!xy.is_array() || xy.size() != 2) throw LayoutError("center " + key + " must be [x, y]");
      l.centers[parse_command_key(key)] = {xy[0].get<double>(), xy[1].get<double>()};
    }
    return l;
  } catch (const nlohmann::json::exception& e) {
    throw LayoutError(std::string("layout: ") + e.what());
  } catch (const utf8::Error& e) {
    throw LayoutError(std::string("layout: ") + e.what());
  }
}

// Canonical text form: sorted keys, two-space indent, trailing newline.
inline std::string serialize_layout(const LayoutSpec& l) { return to_json(l).dump(2) + "\n"; }

inline LayoutSpec parse_layout(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw LayoutError(std::string("layout: ") + e.what());
  }
  return layout_from_json(j);
}

}  // namespace gazekb
