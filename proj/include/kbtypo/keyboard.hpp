#pragma once

#include <array>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kbtypo/common.hpp"

namespace kbtypo {

struct KeyPosition {
  int row = 0;
  int col = 0;
};

/// Physical key grid. Rows run top (number row) to bottom; each row is a
/// staggered half key to the right of the one above, so a key touches the
/// keys directly above and above-right, and directly below and below-left.
class KeyboardLayout {
 public:
  static KeyboardLayout qwerty() {
    return KeyboardLayout({"1234567890", "qwertyuiop", "asdfghjkl", "zxcvbnm"});
  }

  explicit KeyboardLayout(std::vector<std::string> rows) : rows_(std::move(rows)) {
    position_.fill(std::nullopt);
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      for (std::size_t c = 0; c < rows_[r].size(); ++c) {
        auto key = static_cast<unsigned char>(rows_[r][c]);
        if (key >= 128 || is_ascii_space(rows_[r][c]))
          throw DataError("keyboard layout: keys must be printable ASCII");
        if (position_[key])
          throw DataError(std::string("keyboard layout: duplicate key '") + rows_[r][c] + "'");
        position_[key] = KeyPosition{static_cast<int>(r), static_cast<int>(c)};
      }
    }
    for (char c = 'a'; c <= 'z'; ++c) require(c);
    for (char c = '0'; c <= '9'; ++c) require(c);
  }

  /// One row of keys per line, top row first. Blank lines are ignored.
  static KeyboardLayout load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open keyboard layout " + path);
    std::vector<std::string> rows;
    std::string line;
    while (std::getline(in, line)) {
      auto t = trim(line);
      if (!t.empty()) rows.emplace_back(t);
    }
    return KeyboardLayout(std::move(rows));
  }

  const std::vector<std::string>& rows() const { return rows_; }

  std::optional<KeyPosition> position(char key) const {
    auto u = static_cast<unsigned char>(to_lower_ascii(key));
    if (u >= 128) return std::nullopt;
    return position_[u];
  }

  std::optional<char> key_at(int row, int col) const {
    if (row < 0 || row >= static_cast<int>(rows_.size())) return std::nullopt;
    const auto& r = rows_[static_cast<std::size_t>(row)];
    if (col < 0 || col >= static_cast<int>(r.size())) return std::nullopt;
    return r[static_cast<std::size_t>(col)];
  }

  /// Adjacent keys in a fixed order (left, right, above, above-right, below,
  /// below-left). Characters not on the grid have no neighbors.
  std::vector<char> neighbors(char key) const {
    std::vector<char> out;
    auto pos = position(key);
    if (!pos) return out;
    static constexpr std::array<std::array<int, 2>, 6> offsets{
        {{0, -1}, {0, 1}, {-1, 0}, {-1, 1}, {1, 0}, {1, -1}}};
    for (auto [dr, dc] : offsets)
      if (auto k = key_at(pos->row + dr, pos->col + dc)) out.push_back(*k);
    return out;
  }

  bool adjacent(char a, char b) const {
    for (char n : neighbors(a))
      if (n == to_lower_ascii(b)) return true;
    return false;
  }

 private:
  void require(char c) const {
    if (!position_[static_cast<unsigned char>(c)])
      throw DataError(std::string("keyboard layout: missing key '") + c + "'");
  }

  std::vector<std::string> rows_;
  std::array<std::optional<KeyPosition>, 128> position_{};
};

}  // namespace kbtypo
