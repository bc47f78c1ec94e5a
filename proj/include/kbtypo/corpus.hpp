#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "kbtypo/common.hpp"
#include "kbtypo/typo.hpp"
#include "kbtypo/victim.hpp"

namespace kbtypo {

struct Corpus {
  std::string name;
  std::vector<LabeledExample> examples;
  int num_classes = 0;

  std::size_t size() const { return examples.size(); }

  std::uint64_t hash() const {
    Fnv1a h;
    for (const auto& ex : examples) h.update(ex.text).update("\t").update(std::to_string(ex.label)).update("\n");
    return h.value();
  }
};

inline std::vector<std::string> read_lines(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(std::string("cannot open ") + what + " " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

/// One example per line: sentence, a single tab, a non-negative integer label.
inline Corpus parse_tsv_corpus(const std::vector<std::string>& lines, std::string name) {
  Corpus corpus{.name = std::move(name), .examples = {}, .num_classes = 0};
  std::vector<std::string> problems;
  int max_label = -1;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string_view line = lines[i];
    const auto tab = line.find('\t');
    std::string why;
    int label = -1;
    if (tab == std::string_view::npos) {
      why = "no tab";
    } else if (line.find('\t', tab + 1) != std::string_view::npos) {
      why = "more than one tab";
    } else {
      auto field = trim(line.substr(tab + 1));
      auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), label);
      if (ec != std::errc{} || p != field.data() + field.size() || field.empty() || label < 0)
        why = "label '" + std::string(field) + "' is not a non-negative integer";
      else if (trim(line.substr(0, tab)).empty())
        why = "empty sentence";
    }
    if (!why.empty()) {
      problems.push_back("line " + std::to_string(i + 1) + ": " + why);
      continue;
    }
    max_label = std::max(max_label, label);
    corpus.examples.push_back({std::string(line.substr(0, tab)), label});
  }
  if (!problems.empty()) {
    std::string msg = corpus.name + ": " + std::to_string(problems.size()) + " malformed line(s)";
    for (std::size_t i = 0; i < problems.size() && i < 10; ++i) msg += "\n  " + problems[i];
    throw DataError(msg);
  }
  if (corpus.examples.empty()) throw DataError(corpus.name + ": empty corpus");
  corpus.num_classes = std::max(2, max_label + 1);
  return corpus;
}

inline Corpus load_tsv_corpus(const std::string& path) {
  return parse_tsv_corpus(read_lines(path, "corpus"), std::filesystem::path(path).stem().string());
}

inline std::string to_tsv(const std::vector<LabeledExample>& examples) {
  std::string out;
  for (const auto& ex : examples) out += ex.text + "\t" + std::to_string(ex.label) + "\n";
  return out;
}

struct MisspellingLoad {
  SubstitutionTable table{.entries = {}, .provenance = TypoSource::ReplaceW};
  std::size_t lines = 0;
  std::size_t skipped = 0;  // lines without "->"
};

/// Common-misspellings list, one "misspelling->correct[, correct...]" per
/// line, inverted into correct -> {misspellings}.
inline MisspellingLoad parse_misspellings(const std::vector<std::string>& lines) {
  MisspellingLoad out;
  for (const auto& raw : lines) {
    const auto line = trim(raw);
    if (line.empty()) continue;
    ++out.lines;
    const auto arrow = line.find("->");
    if (arrow == std::string_view::npos) {
      ++out.skipped;
      continue;
    }
    const auto typo = line.substr(0, arrow);
    for (auto correct : split(line.substr(arrow + 2), ',')) out.table.add(correct, typo);
  }
  return out;
}

inline MisspellingLoad load_misspellings(const std::string& path) {
  return parse_misspellings(read_lines(path, "misspellings list"));
}

/// Substitution table file: "word<TAB>variant[,variant...]" per line; '#'
/// starts a comment line.
inline SubstitutionTable load_substitution_table(const std::string& path, TypoSource provenance) {
  SubstitutionTable table{.entries = {}, .provenance = provenance};
  const auto lines = read_lines(path, "substitution table");
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = trim(lines[i]);
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos)
      throw DataError(path + ": line " + std::to_string(i + 1) + ": expected word<TAB>variants");
    for (auto v : split(line.substr(tab + 1), ',')) table.add(line.substr(0, tab), v);
  }
  return table;
}

}  // namespace kbtypo
