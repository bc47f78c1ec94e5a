#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kbtypo/common.hpp"

namespace kbtypo {

inline constexpr std::string_view kUnknownToken = "[UNK]";
inline constexpr std::string_view kContinuationPrefix = "##";
inline constexpr std::size_t kMaxWordChars = 100;

namespace detail {
struct StringHash {
  using is_transparent = void;
  std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
};
}  // namespace detail

class Vocab {
 public:
  /// Token ids are positions in `tokens`.
  explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    index_.reserve(tokens_.size());
    Fnv1a h;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      auto [it, inserted] = index_.emplace(tokens_[i], static_cast<int>(i));
      if (!inserted) throw DataError("vocab: duplicate token '" + tokens_[i] + "' at line " + std::to_string(i + 1));
      h.update(tokens_[i]).update("\n");
    }
    auto unk = index_.find(kUnknownToken);
    if (unk == index_.end()) throw DataError("vocab: no " + std::string(kUnknownToken) + " entry");
    unk_id_ = unk->second;
    hash_ = h.value();
  }

  /// One token per line; the zero-based line number is the id.
  static Vocab load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocab " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      tokens.push_back(std::move(line));
    }
    try {
      return Vocab(std::move(tokens));
    } catch (const DataError& e) {
      throw DataError(path + ": " + e.what());
    }
  }

  std::size_t size() const { return tokens_.size(); }
  int unk_id() const { return unk_id_; }
  std::uint64_t hash() const { return hash_; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  int find(std::string_view token) const {
    auto it = index_.find(token);
    return it == index_.end() ? -1 : it->second;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int, detail::StringHash, std::equal_to<>> index_;
  int unk_id_ = -1;
  std::uint64_t hash_ = 0;
};

/// One pre-tokenized word. `chunk` is the index of the whitespace-delimited
/// word of the text that contains it ("oh!" is one chunk, two words).
struct WordSpan {
  std::size_t word_index = 0;
  std::string text;
  std::size_t char_start = 0;
  std::size_t char_end = 0;
  std::size_t chunk = 0;
};

struct Component {
  std::string token;
  int id = -1;
  std::size_t word_index = 0;
  std::size_t char_start = 0;
  std::size_t char_end = 0;
};

/// Offsets are byte offsets into `text`.
struct Segmentation {
  std::string text;
  std::vector<WordSpan> words;
  std::vector<Component> components;

  std::size_t size() const { return components.size(); }
};

/// Greedy longest-prefix WordPiece split of one lowercase word, appended to
/// `out`. Returns false (and appends nothing) when some remainder has no match.
inline bool wordpiece_split(std::string_view word, const Vocab& vocab, std::vector<std::pair<int, std::size_t>>& out) {
  std::vector<std::pair<int, std::size_t>> pieces;
  std::string probe;
  std::size_t start = 0;
  while (start < word.size()) {
    std::size_t end = word.size();
    int match = -1;
    while (start < end) {
      probe.clear();
      if (start > 0) probe.append(kContinuationPrefix);
      probe.append(word.substr(start, end - start));
      match = vocab.find(probe);
      if (match >= 0) break;
      --end;
    }
    if (match < 0) return false;
    pieces.emplace_back(match, end);
    start = end;
  }
  out.insert(out.end(), pieces.begin(), pieces.end());
  return true;
}

/// Whitespace split, ASCII punctuation split off as single-character words,
/// lowercasing, then WordPiece per word. Words containing non-ASCII bytes,
/// longer than 100 characters, or with an unmatched remainder become one
/// unknown token.
inline Segmentation tokenize(std::string_view text, const Vocab& vocab) {
  Segmentation seg;
  seg.text = std::string(text);
  const auto chunks = whitespace_chunks(text);
  for (std::size_t ci = 0; ci < chunks.size(); ++ci) {
    std::size_t i = chunks[ci].begin;
    while (i < chunks[ci].end) {
      std::size_t j = i + 1;
      if (!is_ascii_punct(text[i]))
        while (j < chunks[ci].end && !is_ascii_punct(text[j])) ++j;
      seg.words.push_back({seg.words.size(), std::string(text.substr(i, j - i)), i, j, ci});
      i = j;
    }
  }

  std::vector<std::pair<int, std::size_t>> pieces;
  for (const auto& w : seg.words) {
    const std::string lower = to_lower_ascii(w.text);
    bool ascii = true;
    for (unsigned char c : lower) ascii = ascii && c < 128;
    pieces.clear();
    if (!ascii || lower.size() > kMaxWordChars || !wordpiece_split(lower, vocab, pieces)) {
      seg.components.push_back({vocab.token(vocab.unk_id()), vocab.unk_id(), w.word_index, w.char_start, w.char_end});
      continue;
    }
    std::size_t begin = 0;
    for (auto [id, end] : pieces) {
      seg.components.push_back({vocab.token(id), id, w.word_index, w.char_start + begin, w.char_start + end});
      begin = end;
    }
  }
  return seg;
}

inline WordSpan backtrack_to_word(const Segmentation& seg, std::size_t component_index) {
  if (component_index >= seg.components.size())
    throw ContractViolation("backtrack_to_word: component " + std::to_string(component_index) + " out of range (N=" +
                            std::to_string(seg.components.size()) + ")");
  return seg.words[seg.components[component_index].word_index];
}

/// Number of subword components `word` splits into; an unknown word counts as 1.
inline std::size_t fragmentation(std::string_view word, const Vocab& vocab) {
  if (word.empty()) throw ContractViolation("fragmentation: empty word");
  return tokenize(word, vocab).size();
}

}  // namespace kbtypo
