#include <gtest/gtest.h>

#include <random>

#include "gazekb/keyboard.hpp"

using namespace gazekb;

namespace {

std::vector<FeedbackKind> kinds(const std::vector<FeedbackEvent>& ev) {
  std::vector<FeedbackKind> out;
  for (const auto& e : ev) out.push_back(e.kind);
  return out;
}

KeyboardState type(const LayoutSpec& l, KeyboardState s, const std::vector<CommandId>& cmds) {
  for (auto c : cmds) s = apply_command(l, std::move(s), c, 0).first;
  return s;
}

}  // namespace

TEST(Keyboard, GroupOpensLevelTwo) {
  const auto l = default_layout();
  const auto [s, ev] = apply_command(l, initial_state(U"a"), CommandId(1), 10);
  EXPECT_EQ(s.level, 2);
  EXPECT_EQ(s.active_group, CommandId(1));
  EXPECT_EQ(kinds(ev), std::vector{FeedbackKind::level_changed});
}

TEST(Keyboard, SlotCommitsLetterAndReturns) {
  const auto l = default_layout();
  auto s = apply_command(l, initial_state(U"b"), CommandId(1), 0).first;
  // C1 = AaBbCcDd; slot 3 is command 4
  const auto [s2, ev] = apply_command(l, s, CommandId(4), 5);
  EXPECT_EQ(s2.typed, U"b");
  EXPECT_EQ(s2.level, 1);
  EXPECT_FALSE(s2.active_group);
  EXPECT_EQ(kinds(ev), (std::vector{FeedbackKind::letter_added, FeedbackKind::audio_cue, FeedbackKind::level_changed}));
  EXPECT_EQ(std::get<char32_t>(ev[0].payload), U'b');
  EXPECT_TRUE(is_complete(s2));
}

TEST(Keyboard, GoBackLeavesTextUnchanged) {
  const auto l = default_layout();
  auto s = initial_state(U"x");
  s.typed = U"ab";
  s = apply_command(l, s, CommandId(3), 0).first;
  const auto [s2, ev] = apply_command(l, s, kGoBack, 0);
  EXPECT_EQ(s2.typed, U"ab");
  EXPECT_EQ(s2.level, 1);
  EXPECT_EQ(kinds(ev), std::vector{FeedbackKind::level_changed});
}

TEST(Keyboard, DeleteAtLevelOne) {
  const auto l = default_layout();
  auto s = initial_state(U"x");
  s.typed = U"ab";
  const auto [s2, ev] = apply_command(l, s, kDelete, 0);
  EXPECT_EQ(s2.typed, U"a");
  EXPECT_EQ(kinds(ev), std::vector{FeedbackKind::letter_deleted});
  const auto [s3, ev3] = apply_command(l, initial_state(U"x"), kDelete, 0);
  EXPECT_TRUE(s3.typed.empty());
  EXPECT_TRUE(ev3.empty());
}

TEST(Keyboard, CenterAtLevelOneIsNoOp) {
  const auto l = default_layout();
  const auto s = initial_state(U"x");
  const auto [s2, ev] = apply_command(l, s, kGoBack, 0);
  EXPECT_EQ(s2, s);
  EXPECT_TRUE(ev.empty());
}

TEST(Keyboard, TaskSentenceNeedsFortySixCommands) {
  const auto l = default_layout();
  const auto cmds = commands_for_text(l, kTaskSentence);
  EXPECT_EQ(cmds.size(), 46u);
  const auto s = type(l, initial_state(std::u32string(kTaskSentence)), cmds);
  EXPECT_EQ(s.typed, kTaskSentence);
  EXPECT_TRUE(is_complete(s));
}

TEST(Keyboard, LastFive) {
  auto s = initial_state(U"");
  s.typed = U"Painting";
  EXPECT_EQ(last_five(s), U"nting");
  s.typed = U"Pa";
  EXPECT_EQ(last_five(s), U"Pa");
}

TEST(Keyboard, UntypeableCharacterNamed) {
  try {
    commands_for_text(default_layout(), U"aQ");
    FAIL();
  } catch (const UntypeableCharacter& e) {
    EXPECT_EQ(e.character, U'Q');
    EXPECT_NE(std::string(e.what()).find("'Q'"), std::string::npos);
  }
}

// Typing any character from level 1 then deleting it restores the state.
TEST(Keyboard, TypeThenDeleteIsIdentity) {
  const auto l = default_layout();
  std::mt19937_64 rng(2);
  for (const auto& [g, chars] : l.groups)
    for (char32_t ch : chars) {
      auto s = initial_state(U"target");
      s.typed = rng() % 2 ? U"" : U"pre";
      const auto cmds = commands_for_text(l, std::u32string(1, ch));
      auto t = type(l, s, cmds);
      ASSERT_EQ(t.typed.size(), s.typed.size() + 1);
      t = apply_command(l, t, kDelete, 0).first;
      ASSERT_EQ(t, s);
    }
}

// Random command streams: level 2 iff a group is active, text changes only
// through letter events, and replaying the events reproduces the text.
TEST(Keyboard, RandomStreamInvariants) {
  const auto l = default_layout();
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    auto s = initial_state(U"ab");
    std::u32string mirror;
    for (int i = 0; i < 200; ++i) {
      const CommandId c(1 + static_cast<int>(rng() % 9));
      const auto before = s.typed;
      auto [next, ev] = apply_command(l, s, c, i);
      for (const auto& e : ev) {
        if (e.kind == FeedbackKind::letter_added) mirror.push_back(std::get<char32_t>(e.payload));
        if (e.kind == FeedbackKind::letter_deleted) {
          ASSERT_EQ(mirror.back(), std::get<char32_t>(e.payload));
          mirror.pop_back();
        }
      }
      ASSERT_EQ(next.level == 2, next.active_group.has_value());
      ASSERT_EQ(next.typed, mirror);
      ASSERT_LE(std::max(next.typed.size(), before.size()) - std::min(next.typed.size(), before.size()), 1u);
      s = std::move(next);
    }
  }
}

// Following the planner from random states always reaches the target.
TEST(Planner, ReachesTargetFromAnyState) {
  const auto l = default_layout();
  const std::u32string target(kTaskSentence);
  std::mt19937_64 rng(8);
  for (auto policy : {CorrectionPolicy::go_back_then_retry, CorrectionPolicy::immediate_delete}) {
    for (int trial = 0; trial < 100; ++trial) {
      auto s = initial_state(target);
      for (int i = 0; i < 30; ++i) s = apply_command(l, s, CommandId(1 + static_cast<int>(rng() % 9)), 0).first;
      int steps = 0;
      while (const auto c = next_command(l, s, policy)) {
        s = apply_command(l, s, *c, 0).first;
        ASSERT_LT(++steps, 400);
      }
      ASSERT_TRUE(is_complete(s));
      ASSERT_EQ(s.level, 1);
    }
  }
}

TEST(Planner, ErrorFreePathMatchesCommandsForText) {
  const auto l = default_layout();
  auto s = initial_state(std::u32string(kTaskSentence));
  std::vector<CommandId> plan;
  while (const auto c = next_command(l, s)) {
    plan.push_back(*c);
    s = apply_command(l, s, *c, 0).first;
  }
  EXPECT_EQ(plan, commands_for_text(l, kTaskSentence));
}

TEST(Planner, WrongGroupPolicies) {
  const auto l = default_layout();
  auto s = initial_state(U"P");  // P lives in C4
  s = apply_command(l, s, CommandId(1), 0).first;
  EXPECT_EQ(next_command(l, s, CorrectionPolicy::go_back_then_retry), kGoBack);
  // immediate delete commits the slot of 'P' (slot 6, command 8) inside C1
  EXPECT_EQ(next_command(l, s, CorrectionPolicy::immediate_delete), CommandId(8));
  s.level = 1;
  s.active_group.reset();
  s.typed = U"D";
  EXPECT_EQ(next_command(l, s), kDelete);
}

TEST(Policy, NamesRoundTrip) {
  for (auto p : {CorrectionPolicy::go_back_then_retry, CorrectionPolicy::immediate_delete})
    EXPECT_EQ(correction_policy_from(to_string(p)), p);
  EXPECT_THROW(correction_policy_from("retry"), ContractViolation);
}
