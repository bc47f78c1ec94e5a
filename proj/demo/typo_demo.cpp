// Prints the typo candidates of a word and how WordPiece splits a few of them.
//
//   typo_demo [word] [vocab.txt]

#include <iostream>
#include <string>

#include "kbtypo/kbtypo.hpp"

int main(int argc, char** argv) {
  using namespace kbtypo;
  const std::string word = argc > 1 ? argv[1] : "robustness";
  const std::string vocab_path = argc > 2 ? argv[2] : "data/vocab/bert-base-uncased.txt";

  TypoGenerator typos;
  const auto cands = typos.candidates(word, SourceSet::all());
  std::cout << cands.size() << " candidates for '" << word << "'\n";

  try {
    const auto vocab = Vocab::load(vocab_path);
    std::size_t shown = 0;
    for (const auto& c : cands) {
      if (shown++ % 25 != 0) continue;
      std::cout << "  " << to_string(c.source) << "\t" << c.variant << "\t->";
      for (const auto& comp : tokenize(c.variant, vocab).components) std::cout << ' ' << comp.token;
      std::cout << "\n";
    }
  } catch (const DataError& e) {
    std::cerr << e.what() << " (pass the vocab path as the second argument)\n";
    return 2;
  }
  return 0;
}
