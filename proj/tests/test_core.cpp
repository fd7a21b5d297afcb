#include <gtest/gtest.h>

#include <random>
#include <set>

#include "gazekb/keyboard.hpp"
#include "gazekb/layout.hpp"

using namespace gazekb;

TEST(Direction, CommandBijection) {
  EXPECT_EQ(direction_of_command(CommandId(1)), Direction::NW);
  EXPECT_EQ(direction_of_command(CommandId(5)), Direction::C);
  EXPECT_EQ(index_of(direction_of_command(CommandId(5))), 4);
  EXPECT_EQ(direction_of_command(CommandId(9)), Direction::SE);
  for (int c = 1; c <= 9; ++c) {
    EXPECT_EQ(index_of(direction_of_command(CommandId(c))), c - 1);
    EXPECT_EQ(command_of_direction(direction_of_command(CommandId(c))).value(), c);
  }
}

TEST(Direction, OutOfRangeCommandIsContractViolation) {
  EXPECT_THROW(CommandId(0), ContractViolation);
  EXPECT_THROW(CommandId(10), ContractViolation);
  EXPECT_THROW(direction_at(9), ContractViolation);
}

TEST(Direction, ArgmaxTiesBreakLow) {
  ProbVector v{};
  v.fill(1.0 / 9);
  EXPECT_EQ(argmax(v), Direction::NW);
  v[3] = v[7] = 0.3;
  EXPECT_EQ(argmax(v), Direction::W);
}

TEST(Layout, DefaultIsValid) {
  const auto l = default_layout();
  EXPECT_TRUE(validate_layout(l).empty());
  std::set<char32_t> distinct;
  for (const auto& [g, chars] : l.groups) distinct.insert(chars.begin(), chars.end());
  EXPECT_EQ(distinct.size(), 56u);
  EXPECT_EQ(l.groups.size(), 7u);
  EXPECT_FALSE(l.groups.contains(5));
  EXPECT_FALSE(l.groups.contains(9));
}

TEST(Layout, DefaultCentersOnThirdsGrid) {
  const auto l = default_layout();
  EXPECT_DOUBLE_EQ(l.centers.at(1).x, 1.0 / 6);
  EXPECT_DOUBLE_EQ(l.centers.at(5).x, 0.5);
  EXPECT_DOUBLE_EQ(l.centers.at(5).y, 0.5);
  EXPECT_DOUBLE_EQ(l.centers.at(9).y, 5.0 / 6);
}

TEST(Layout, DuplicateCharacterReported) {
  auto l = default_layout();
  // 'a' also in C2, replacing 'E'
  l.groups[2][0] = U'a';
  const auto v = validate_layout(l);
  ASSERT_FALSE(v.empty());
  EXPECT_TRUE(std::any_of(v.begin(), v.end(), [](const Violation& x) {
    return x.kind == ViolationKind::duplicate_character && x.detail.find("'a'") != std::string::npos &&
           x.detail.find("C1") != std::string::npos && x.detail.find("C2") != std::string::npos;
  }));
}

TEST(Layout, MissingSpaceReported) {
  auto l = default_layout();
  l.groups[7][0] = U';';
  const auto v = validate_layout(l);
  EXPECT_TRUE(std::any_of(v.begin(), v.end(), [](const Violation& x) { return x.kind == ViolationKind::missing_space; }));
}

TEST(Layout, UnreachableSentenceCharacter) {
  const auto v = validate_layout(default_layout(), U"Quiz");
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[0].kind, ViolationKind::unreachable_character);
  EXPECT_NE(v[0].detail.find("'Q'"), std::string::npos);
  EXPECT_NE(v[1].detail.find("'z'"), std::string::npos);
}

TEST(Layout, StructuralViolations) {
  auto l = default_layout();
  l.groups[5] = {U'1'};
  l.groups[3].pop_back();
  l.centers.erase(4);
  l.centers[6] = {1.5, 0.5};
  const auto v = validate_layout(l);
  auto has = [&](ViolationKind k) {
    return std::any_of(v.begin(), v.end(), [k](const Violation& x) { return x.kind == k; });
  };
  EXPECT_TRUE(has(ViolationKind::unexpected_group));
  EXPECT_TRUE(has(ViolationKind::wrong_group_size));
  EXPECT_TRUE(has(ViolationKind::missing_center));
  EXPECT_TRUE(has(ViolationKind::center_out_of_range));
}

TEST(Layout, CanonicalTextRoundTrip) {
  const auto l = default_layout();
  const std::string text = serialize_layout(l);
  EXPECT_EQ(parse_layout(text), l);
  EXPECT_EQ(serialize_layout(parse_layout(text)), text);
}

// Random permutations of the 56 characters over the groups, random centers,
// a few non-ASCII characters: parse(serialize(x)) == x and serialize is a
// fixed point on its own output.
TEST(Layout, RoundTripProperty) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<char32_t> pool;
  for (const auto& [g, chars] : default_layout().groups) pool.insert(pool.end(), chars.begin(), chars.end());
  pool[10] = U'é';
  pool[20] = U'ß';
  pool[30] = U'€';
  for (int trial = 0; trial < 50; ++trial) {
    std::shuffle(pool.begin(), pool.end(), rng);
    LayoutSpec l;
    l.version = "rand-" + std::to_string(trial);
    std::size_t k = 0;
    for (int g : kGroupCommands) l.groups[g] = std::vector<char32_t>(pool.begin() + k, pool.begin() + k + 8), k += 8;
    for (int c = 1; c <= 9; ++c) l.centers[c] = {u(rng), u(rng)};
    const auto text = serialize_layout(l);
    ASSERT_EQ(parse_layout(text), l);
    ASSERT_EQ(serialize_layout(parse_layout(text)), text);
  }
}

TEST(Layout, ParseErrors) {
  EXPECT_THROW(parse_layout("{"), LayoutError);
  EXPECT_THROW(parse_layout(R"({"version":"x","groups":{"C1":["ab"]},"centers":{}})"), LayoutError);
  EXPECT_THROW(parse_layout(R"({"version":"x","groups":{"X1":["a"]},"centers":{}})"), LayoutError);
}

TEST(Layout, AcceptedLayoutTypesTheSentence) {
  const auto l = default_layout();
  ASSERT_TRUE(validate_layout(l).empty());
  EXPECT_NO_THROW(commands_for_text(l, kTaskSentence));
}

TEST(Utf8, RejectsMalformed) {
  EXPECT_THROW(utf8::decode("\xC3"), utf8::Error);
  EXPECT_THROW(utf8::decode("\xC0\x80"), utf8::Error);  // overlong
  EXPECT_THROW(utf8::decode("\xED\xA0\x80"), utf8::Error);  // surrogate
  EXPECT_EQ(utf8::decode("a\xC3\xA9"), U"aé");
  EXPECT_EQ(utf8::encode(U"€x"), "\xE2\x82\xAC" "x");
}
