#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "kbtypo/common.hpp"
#include "kbtypo/keyboard.hpp"

namespace kbtypo {

enum class TypoSource : std::uint8_t { Insertion, Deletion, Swap, Mistype, Pronounce, ReplaceW };

inline constexpr std::array<TypoSource, 6> kAllSources{TypoSource::Insertion, TypoSource::Deletion,
                                                      TypoSource::Swap,      TypoSource::Mistype,
                                                      TypoSource::Pronounce, TypoSource::ReplaceW};

inline std::string_view to_string(TypoSource s) {
  switch (s) {
    case TypoSource::Insertion: return "insertion";
    case TypoSource::Deletion: return "deletion";
    case TypoSource::Swap: return "swap";
    case TypoSource::Mistype: return "mistype";
    case TypoSource::Pronounce: return "pronounce";
    case TypoSource::ReplaceW: return "replace_w";
  }
  return "?";
}

inline std::optional<TypoSource> parse_source(std::string_view name) {
  for (auto s : kAllSources)
    if (to_string(s) == name) return s;
  return std::nullopt;
}

/// A set of typo sources, printable and parseable as e.g. "insertion",
/// "pronounce+replace_w", "wiki" (the two table-driven sources) or "all".
class SourceSet {
 public:
  SourceSet() = default;
  SourceSet(std::initializer_list<TypoSource> sources) {
    for (auto s : sources) insert(s);
  }

  static SourceSet all() {
    SourceSet s;
    s.bits_ = 0x3f;
    return s;
  }

  static SourceSet parse(std::string_view spec) {
    SourceSet out;
    for (auto part : split(spec, '+')) {
      auto name = trim(part);
      if (name == "all") {
        out.bits_ |= 0x3f;
      } else if (name == "wiki") {
        out.insert(TypoSource::Pronounce);
        out.insert(TypoSource::ReplaceW);
      } else if (auto s = parse_source(name)) {
        out.insert(*s);
      } else {
        throw DataError("unknown typo source '" + std::string(name) + "'");
      }
    }
    if (out.empty()) throw DataError("empty typo source set");
    return out;
  }

  void insert(TypoSource s) { bits_ |= bit(s); }
  bool contains(TypoSource s) const { return (bits_ & bit(s)) != 0; }
  bool empty() const { return bits_ == 0; }
  bool operator==(const SourceSet&) const = default;

  std::string label() const {
    if (bits_ == 0x3f) return "all";
    if (bits_ == (bit(TypoSource::Pronounce) | bit(TypoSource::ReplaceW))) return "wiki";
    std::string out;
    for (auto s : kAllSources) {
      if (!contains(s)) continue;
      if (!out.empty()) out += '+';
      out += to_string(s);
    }
    return out;
  }

 private:
  static std::uint8_t bit(TypoSource s) { return static_cast<std::uint8_t>(1u << static_cast<unsigned>(s)); }
  std::uint8_t bits_ = 0;
};

struct TypoCandidate {
  std::string original;
  std::string variant;
  TypoSource source = TypoSource::Insertion;
  // Absent for whole-word table substitutions.
  std::optional<std::size_t> edit_position;

  bool operator==(const TypoCandidate&) const = default;
};

/// Whole-word substitutions, keyed by the lowercase correct word.
struct SubstitutionTable {
  std::map<std::string, std::vector<std::string>> entries;
  TypoSource provenance = TypoSource::Pronounce;

  void add(std::string_view word, std::string_view variant) {
    auto key = to_lower_ascii(trim(word));
    auto val = to_lower_ascii(trim(variant));
    if (key.empty() || val.empty() || key == val) return;
    auto& vs = entries[key];
    auto it = std::lower_bound(vs.begin(), vs.end(), val);
    if (it == vs.end() || *it != val) vs.insert(it, val);
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [_, vs] : entries) n += vs.size();
    return n;
  }
};

struct TypoTables {
  SubstitutionTable pronounce{.entries = {}, .provenance = TypoSource::Pronounce};
  SubstitutionTable replace_w{.entries = {}, .provenance = TypoSource::ReplaceW};
};

namespace detail {

// Collects candidates for one source: first edit position wins for a given
// variant, and the output is ordered by (edit position, variant).
class CandidateSink {
 public:
  CandidateSink(std::string_view original, TypoSource source)
      : original_(original), lower_(to_lower_ascii(original)), source_(source) {}

  void add(std::string variant, std::optional<std::size_t> pos) {
    if (variant.empty() || to_lower_ascii(variant) == lower_) return;
    auto [it, inserted] = best_.try_emplace(std::move(variant), pos);
    if (!inserted && pos && (!it->second || *pos < *it->second)) it->second = pos;
  }

  std::vector<TypoCandidate> finish() && {
    std::vector<TypoCandidate> out;
    out.reserve(best_.size());
    for (auto& [variant, pos] : best_) out.push_back({original_, variant, source_, pos});
    std::stable_sort(out.begin(), out.end(), [](const TypoCandidate& a, const TypoCandidate& b) {
      return a.edit_position < b.edit_position;
    });
    return out;
  }

 private:
  std::string original_;
  std::string lower_;
  TypoSource source_;
  std::map<std::string, std::optional<std::size_t>> best_;
};

}  // namespace detail

/// Duplicated characters, keyboard neighbors inserted on either side of a
/// character, and a space at every interior position.
inline std::vector<TypoCandidate> gen_insertion(std::string_view word, const KeyboardLayout& layout) {
  if (word.empty()) throw ContractViolation("gen_insertion: empty word");
  detail::CandidateSink sink(word, TypoSource::Insertion);
  const std::string w(word);
  for (std::size_t i = 0; i < w.size(); ++i) {
    sink.add(w.substr(0, i + 1) + w[i] + w.substr(i + 1), i);
    for (char n : layout.neighbors(w[i])) {
      sink.add(w.substr(0, i) + n + w.substr(i), i);
      sink.add(w.substr(0, i + 1) + n + w.substr(i + 1), i + 1);
    }
    if (i > 0) sink.add(w.substr(0, i) + ' ' + w.substr(i), i);
  }
  return std::move(sink).finish();
}

inline std::vector<TypoCandidate> gen_deletion(std::string_view word) {
  detail::CandidateSink sink(word, TypoSource::Deletion);
  if (word.size() < 2) return {};
  const std::string w(word);
  for (std::size_t i = 0; i < w.size(); ++i) sink.add(w.substr(0, i) + w.substr(i + 1), i);
  return std::move(sink).finish();
}

inline std::vector<TypoCandidate> gen_swap(std::string_view word) {
  detail::CandidateSink sink(word, TypoSource::Swap);
  std::string w(word);
  for (std::size_t i = 0; i + 1 < w.size(); ++i) {
    if (to_lower_ascii(w[i]) == to_lower_ascii(w[i + 1])) continue;
    std::swap(w[i], w[i + 1]);
    sink.add(w, i);
    std::swap(w[i], w[i + 1]);
  }
  return std::move(sink).finish();
}

/// Each character replaced by each of its keyboard neighbors.
inline std::vector<TypoCandidate> gen_mistype(std::string_view word, const KeyboardLayout& layout) {
  if (word.empty()) throw ContractViolation("gen_mistype: empty word");
  detail::CandidateSink sink(word, TypoSource::Mistype);
  std::string w(word);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const char orig = w[i];
    for (char n : layout.neighbors(orig)) {
      w[i] = n;
      sink.add(w, i);
    }
    w[i] = orig;
  }
  return std::move(sink).finish();
}

/// Table lookup on the word with leading and trailing punctuation set aside;
/// the punctuation is re-attached to every variant.
inline std::vector<TypoCandidate> gen_table_sub(std::string_view word, const SubstitutionTable& table) {
  detail::CandidateSink sink(word, table.provenance);
  std::size_t b = 0, e = word.size();
  while (b < e && is_ascii_punct(word[b]) && word[b] != '\'') ++b;
  while (e > b && is_ascii_punct(word[e - 1]) && word[e - 1] != '\'') --e;
  auto it = table.entries.find(to_lower_ascii(word.substr(b, e - b)));
  if (it == table.entries.end()) return {};
  for (const auto& v : it->second)
    sink.add(std::string(word.substr(0, b)) + v + std::string(word.substr(e)), std::nullopt);
  return std::move(sink).finish();
}

/// All candidates for `word` from the enabled sources, deduplicated on the
/// variant string. Order: source, then edit position, then variant.
inline std::vector<TypoCandidate> keyboard_typo(std::string_view word, const SourceSet& sources,
                                                const KeyboardLayout& layout, const TypoTables& tables) {
  if (word.empty()) throw ContractViolation("keyboard_typo: empty word");
  std::vector<TypoCandidate> out;
  std::unordered_set<std::string> seen;
  auto append = [&](std::vector<TypoCandidate> batch) {
    for (auto& c : batch)
      if (seen.insert(c.variant).second) out.push_back(std::move(c));
  };
  for (auto s : kAllSources) {
    if (!sources.contains(s)) continue;
    switch (s) {
      case TypoSource::Insertion: append(gen_insertion(word, layout)); break;
      case TypoSource::Deletion: append(gen_deletion(word)); break;
      case TypoSource::Swap: append(gen_swap(word)); break;
      case TypoSource::Mistype: append(gen_mistype(word, layout)); break;
      case TypoSource::Pronounce: append(gen_table_sub(word, tables.pronounce)); break;
      case TypoSource::ReplaceW: append(gen_table_sub(word, tables.replace_w)); break;
    }
  }
  return out;
}

}  // namespace kbtypo
