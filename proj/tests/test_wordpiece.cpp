#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "test_support.hpp"

using namespace kbtypo;

namespace {

std::vector<std::string> tokens_of(std::string_view text, const Vocab& vocab) {
  std::vector<std::string> out;
  for (const auto& c : tokenize(text, vocab).components) out.push_back(c.token);
  return out;
}

std::string strip_markers(const std::vector<Component>& comps) {
  std::string out;
  for (const auto& c : comps) out += c.token.starts_with("##") ? c.token.substr(2) : c.token;
  return out;
}

const std::vector<std::string>& dev_words() {
  static const std::vector<std::string> words = [] {
    std::vector<std::string> out;
    for (const auto& ex : fixtures::rt_dev().examples)
      for (auto c : whitespace_chunks(ex.text)) out.push_back(ex.text.substr(c.begin, c.end - c.begin));
    return out;
  }();
  return words;
}

}  // namespace

TEST(WordPiece, BertVocabSize) { EXPECT_EQ(fixtures::bert_vocab()->size(), 30522u); }

TEST(WordPiece, KnownSegmentations) {
  const auto& v = *fixtures::bert_vocab();
  EXPECT_EQ(tokens_of("robustness", v), (std::vector<std::string>{"robust", "##ness"}));
  EXPECT_EQ(tokens_of("adversarial", v), (std::vector<std::string>{"ad", "##vers", "##aria", "##l"}));
  EXPECT_EQ(tokens_of("inspird", v), (std::vector<std::string>{"ins", "##pi", "##rd"}));
  EXPECT_EQ(tokens_of("robustnesss", v), (std::vector<std::string>{"robust", "##ness", "##s"}));
}

TEST(WordPiece, Fragmentation) {
  const auto& v = *fixtures::bert_vocab();
  EXPECT_EQ(fragmentation("robustness", v), 2u);
  EXPECT_EQ(fragmentation("a", v), 1u);
  EXPECT_EQ(fragmentation("inspird", v), 3u);
  EXPECT_THROW(fragmentation("", v), ContractViolation);
}

TEST(WordPiece, PunctuationAndCase) {
  const auto& v = *fixtures::bert_vocab();
  EXPECT_EQ(tokens_of("Oh!", v), (std::vector<std::string>{"oh", "!"}));
  const auto seg = tokenize("Oh! it's", v);
  ASSERT_EQ(seg.words.size(), 5u);
  EXPECT_EQ(seg.words[0].chunk, 0u);
  EXPECT_EQ(seg.words[1].chunk, 0u);
  EXPECT_EQ(seg.words[2].chunk, 1u);
  EXPECT_EQ(seg.words[3].text, "'");
}

TEST(WordPiece, UnknownFallbacks) {
  const auto& v = *fixtures::bert_vocab();
  EXPECT_EQ(tokens_of(std::string(101, 'a'), v), (std::vector<std::string>{"[UNK]"}));
  EXPECT_EQ(tokens_of("caf\xc3\xa9", v), (std::vector<std::string>{"[UNK]"}));
  const auto tiny = Vocab({"[UNK]", "ab"});
  EXPECT_EQ(tokens_of("abc ab", tiny), (std::vector<std::string>{"[UNK]", "ab"}));
}

TEST(WordPiece, VocabErrors) {
  EXPECT_THROW(Vocab({"a", "b"}), DataError);
  EXPECT_THROW(Vocab({"[UNK]", "a", "a"}), DataError);
  const std::string path = ::testing::TempDir() + "two_line_vocab.txt";
  std::ofstream(path) << "hello\nworld\n";
  EXPECT_THROW(Vocab::load(path), DataError);
}

TEST(WordPiece, BacktrackToWord) {
  const auto& v = *fixtures::bert_vocab();
  const auto seg = tokenize("a subject like this should inspird", v);
  std::size_t pi = seg.size();
  for (std::size_t i = 0; i < seg.size(); ++i)
    if (seg.components[i].token == "##pi") pi = i;
  ASSERT_LT(pi, seg.size());
  EXPECT_EQ(backtrack_to_word(seg, pi).text, "inspird");
  EXPECT_EQ(backtrack_to_word(tokenize("hello", v), 0).word_index, 0u);
  EXPECT_EQ(backtrack_to_word(tokenize("robustness matters", v), 1).word_index, 0u);
  EXPECT_THROW(backtrack_to_word(seg, seg.size()), ContractViolation);
}

// Round trip, span tiling and greedy maximality over every word of the dev set
// and a few thousand typo'd variants of them.
TEST(WordPiece, SegmentationPropertiesOverCorpusWords) {
  const auto& v = *fixtures::bert_vocab();
  const auto typos = TypoGenerator{};
  std::mt19937_64 rng(5);
  std::vector<std::string> words = dev_words();
  for (std::size_t i = 0; i < 3000; ++i) {
    const auto& w = dev_words()[uniform_index(rng, dev_words().size())];
    const auto cs = typos.candidates(w, SourceSet::all());
    if (!cs.empty()) words.push_back(cs[uniform_index(rng, cs.size())].variant);
  }
  for (const auto& text : words) {
    const auto seg = tokenize(text, v);
    for (const auto& w : seg.words) {
      ASSERT_LT(w.char_start, w.char_end);
      ASSERT_EQ(w.text, text.substr(w.char_start, w.char_end - w.char_start));
      std::vector<Component> comps;
      for (const auto& c : seg.components)
        if (c.word_index == w.word_index) comps.push_back(c);
      ASSERT_FALSE(comps.empty());
      if (comps.size() == 1 && comps[0].id == v.unk_id()) continue;
      const auto lower = to_lower_ascii(w.text);
      EXPECT_EQ(strip_markers(comps), lower);
      std::size_t at = w.char_start;
      for (const auto& c : comps) {
        EXPECT_EQ(c.char_start, at);
        EXPECT_LT(c.char_start, c.char_end);
        EXPECT_LE(c.char_end, w.char_end);
        at = c.char_end;
        // No longer vocabulary entry starts at the same position.
        const std::size_t s = c.char_start - w.char_start;
        for (std::size_t e = c.char_end - w.char_start + 1; e <= lower.size(); ++e) {
          const std::string longer = (s > 0 ? "##" : "") + lower.substr(s, e - s);
          EXPECT_LT(v.find(longer), 0) << text << ": " << c.token << " extends to " << longer;
        }
      }
      EXPECT_EQ(at, w.char_end);
    }
  }
}

TEST(WordPiece, IsolatedWordTokenizesAsInContext) {
  const auto& v = *fixtures::bert_vocab();
  for (std::size_t i = 0; i < 50; ++i) {
    const auto& text = fixtures::rt_dev().examples[i].text;
    const auto seg = tokenize(text, v);
    for (const auto& w : seg.words) {
      std::vector<std::string> in_context;
      for (const auto& c : seg.components)
        if (c.word_index == w.word_index) in_context.push_back(c.token);
      EXPECT_EQ(tokens_of(w.text, v), in_context) << w.text;
    }
  }
}

TEST(WordPiece, ComponentsAreInTextOrder) {
  const auto& v = *fixtures::bert_vocab();
  const auto seg = tokenize("  the   film , however ,is n't great  ", v);
  for (std::size_t i = 1; i < seg.size(); ++i) EXPECT_LE(seg.components[i - 1].char_end, seg.components[i].char_start);
}
