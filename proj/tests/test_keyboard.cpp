#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "test_support.hpp"

using namespace kbtypo;

namespace {

// Physical key centers of a staggered keyboard: each row is shifted right
// relative to the one above it.
struct Center {
  double x, y;
};

std::optional<Center> center(char key) {
  static const char* rows[] = {"1234567890", "qwertyuiop", "asdfghjkl", "zxcvbnm"};
  static const double shift[] = {0.0, 0.5, 0.75, 1.25};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; rows[r][c]; ++c)
      if (rows[r][c] == key) return Center{c + shift[r], static_cast<double>(r)};
  return std::nullopt;
}

// Keys touch when they sit side by side in a row, or overlap horizontally in
// neighboring rows.
bool touching(char a, char b) {
  auto p = center(a), q = center(b);
  if (!p || !q || a == b) return false;
  const double dx = std::abs(p->x - q->x), dy = std::abs(p->y - q->y);
  if (dy == 0.0) return dx == 1.0;
  return dy == 1.0 && dx < 1.0;
}

}  // namespace

TEST(Keyboard, NeighborsOfOMatchListedKeys) {
  auto n = KeyboardLayout::qwerty().neighbors('o');
  std::set<char> got(n.begin(), n.end());
  EXPECT_EQ(got, (std::set<char>{'i', 'p', '9', '0', 'k', 'l'}));
  EXPECT_EQ(n.size(), 6u);
}

TEST(Keyboard, AdjacencyMatchesGeometryForEveryKeyPair) {
  const auto kb = KeyboardLayout::qwerty();
  const std::string keys = "1234567890qwertyuiopasdfghjklzxcvbnm";
  for (char a : keys)
    for (char b : keys) EXPECT_EQ(kb.adjacent(a, b), touching(a, b)) << a << " " << b;
}

TEST(Keyboard, AdjacencyIsSymmetricAndIrreflexive) {
  const auto kb = KeyboardLayout::qwerty();
  for (const auto& row : kb.rows())
    for (char a : row) {
      EXPECT_FALSE(kb.adjacent(a, a));
      for (char b : kb.neighbors(a)) EXPECT_TRUE(kb.adjacent(b, a)) << a << b;
    }
}

TEST(Keyboard, OffGridCharactersHaveNoNeighbors) {
  const auto kb = KeyboardLayout::qwerty();
  EXPECT_TRUE(kb.neighbors('\'').empty());
  EXPECT_TRUE(kb.neighbors(' ').empty());
  EXPECT_TRUE(kb.neighbors(static_cast<char>(0xC3)).empty());
}

TEST(Keyboard, UppercaseUsesLowercaseKey) {
  const auto kb = KeyboardLayout::qwerty();
  EXPECT_EQ(kb.neighbors('O'), kb.neighbors('o'));
}

TEST(Keyboard, LoadedLayoutFileMatchesBuiltin) {
  const auto kb = KeyboardLayout::load(fixtures::data_path("layouts/qwerty.txt"));
  EXPECT_EQ(kb.rows(), KeyboardLayout::qwerty().rows());
}

TEST(Keyboard, MissingLetterIsRejected) {
  const std::string path = ::testing::TempDir() + "kb_missing.txt";
  std::ofstream(path) << "1234567890\nqwertyuiop\nasdfghjkl\nzxcvbn\n";
  EXPECT_THROW(KeyboardLayout::load(path), DataError);
}

TEST(Keyboard, DuplicateKeyIsRejected) {
  const std::string path = ::testing::TempDir() + "kb_dup.txt";
  std::ofstream(path) << "1234567890\nqwertyuiop\nasdfghjkl\nzxcvbnmq\n";
  EXPECT_THROW(KeyboardLayout::load(path), DataError);
}
