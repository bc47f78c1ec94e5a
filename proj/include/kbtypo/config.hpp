#pragma once

// Experiment configuration (key = value text) and the end-to-end runner.
//
//   # comments start with '#'
//   train = data/rt/train.tsv
//   dev = data/rt/dev.tsv
//   vocab = data/vocab/bert-base-uncased.txt
//   victim = builtin            # or stdio:<command>, tcp:<host>:<port>
//   budgets = 0..10
//   policies = max_grad, min_grad, random
//   sources = all               # ';'-separated sets, e.g. insertion; wiki; all
//
// Relative paths resolve against the directory of the config file.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kbtypo/attack.hpp"
#include "kbtypo/builtin_model.hpp"
#include "kbtypo/corpus.hpp"
#include "kbtypo/keyboard.hpp"
#include "kbtypo/remote.hpp"
#include "kbtypo/report.hpp"
#include "kbtypo/sweep.hpp"
#include "kbtypo/wordpiece.hpp"

namespace kbtypo {

inline constexpr const char* kOutputDirEnv = "KBTYPO_OUTPUT_DIR";

struct ExperimentConfig {
  std::filesystem::path train_path;
  std::filesystem::path dev_path;
  std::filesystem::path vocab_path;
  std::filesystem::path layout_path;        // empty: built-in QWERTY
  std::filesystem::path misspellings_path;  // empty: no replace_w candidates
  std::filesystem::path pronounce_path;     // empty: no pronounce candidates
  std::string train_level = "sentence";     // or "phrase"; recorded only

  std::string victim = "builtin";
  std::filesystem::path model_path;  // builtin: load instead of training when set
  Hyperparams hyperparams;
  int victim_timeout_ms = 30000;

  SweepSpec sweep;
  std::size_t dev_limit = 0;  // 0: whole dev set
  std::filesystem::path output_dir = "out";

  bool remote() const { return victim != "builtin"; }

  /// Every setting that can change results, one "key=value" per line in a
  /// fixed order. Output location and thread count are excluded.
  std::string canonical() const {
    std::ostringstream o;
    auto path = [](const std::filesystem::path& p) { return p.empty() ? std::string() : p.filename().string(); };
    o << "train=" << path(train_path) << "\ndev=" << path(dev_path) << "\nvocab=" << path(vocab_path)
      << "\nlayout=" << path(layout_path) << "\nmisspellings=" << path(misspellings_path)
      << "\npronounce=" << path(pronounce_path) << "\ntrain_level=" << train_level << "\nvictim=" << victim
      << "\nmodel=" << path(model_path) << "\nembed_dim=" << hyperparams.embed_dim
      << "\nhidden_dim=" << hyperparams.hidden_dim << "\nlearning_rate=" << round_trip(hyperparams.learning_rate)
      << "\nepochs=" << hyperparams.epochs << "\nbatch_size=" << hyperparams.batch_size
      << "\nmodel_seed=" << hyperparams.seed << "\nlinear_decay=" << hyperparams.linear_decay
      << "\nweight_decay=" << round_trip(hyperparams.weight_decay) << "\nbudgets=";
    for (int k : sweep.budgets) o << k << ',';
    o << "\npolicies=";
    for (auto p : sweep.policies) o << to_string(p) << ',';
    o << "\nsources=";
    for (const auto& s : sweep.source_sets) o << s.label() << ';';
    o << "\nrandom_seeds=" << sweep.random_seeds << "\nallow_retarget=" << sweep.allow_retarget
      << "\nmaster_seed=" << sweep.master_seed << "\ndev_limit=" << dev_limit << "\n";
    return o.str();
  }

  std::string hash() const { return hex64(Fnv1a().update(canonical()).value()); }
};

namespace detail {

inline bool parse_bool(const std::string& key, std::string_view v) {
  const auto s = to_lower_ascii(v);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw DataError(key + ": expected true or false, got '" + std::string(v) + "'");
}

template <class T>
T parse_number(const std::string& key, std::string_view v) {
  T out{};
  std::istringstream in{std::string(v)};
  in >> out;
  if (!in || !in.eof()) throw DataError(key + ": '" + std::string(v) + "' is not a number");
  return out;
}

/// "0..10", "1,2,5" or a mix such as "0,2..4".
inline std::vector<int> parse_budgets(std::string_view v) {
  std::vector<int> out;
  for (auto part : split(v, ',')) {
    part = trim(part);
    if (part.empty()) continue;
    if (auto dots = part.find(".."); dots != std::string_view::npos) {
      const int lo = parse_number<int>("budgets", trim(part.substr(0, dots)));
      const int hi = parse_number<int>("budgets", trim(part.substr(dots + 2)));
      if (lo > hi) throw DataError("budgets: empty range '" + std::string(part) + "'");
      for (int k = lo; k <= hi; ++k) out.push_back(k);
    } else {
      out.push_back(parse_number<int>("budgets", part));
    }
  }
  for (int k : out)
    if (k < 0) throw DataError("budgets: negative budget");
  if (out.empty()) throw DataError("budgets: no values");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace detail

/// Parses config text. `base` is the directory relative paths resolve against.
inline ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base = {}) {
  ExperimentConfig c;
  auto resolve = [&](std::string_view v) -> std::filesystem::path {
    std::filesystem::path p{std::string(v)};
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
  };
  std::size_t line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    auto line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw DataError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    const auto value = trim(line.substr(eq + 1));
    const std::string v(value);
    if (key == "train") c.train_path = resolve(value);
    else if (key == "dev") c.dev_path = resolve(value);
    else if (key == "vocab") c.vocab_path = resolve(value);
    else if (key == "layout") c.layout_path = resolve(value);
    else if (key == "misspellings") c.misspellings_path = resolve(value);
    else if (key == "pronounce") c.pronounce_path = resolve(value);
    else if (key == "train_level") {
      if (v != "sentence" && v != "phrase") throw DataError("train_level must be sentence or phrase");
      c.train_level = v;
    } else if (key == "victim") c.victim = v;
    else if (key == "model") c.model_path = resolve(value);
    else if (key == "embed_dim") c.hyperparams.embed_dim = detail::parse_number<int>(key, value);
    else if (key == "hidden_dim") c.hyperparams.hidden_dim = detail::parse_number<int>(key, value);
    else if (key == "learning_rate") c.hyperparams.learning_rate = detail::parse_number<double>(key, value);
    else if (key == "epochs") c.hyperparams.epochs = detail::parse_number<int>(key, value);
    else if (key == "batch_size") c.hyperparams.batch_size = detail::parse_number<int>(key, value);
    else if (key == "model_seed") c.hyperparams.seed = detail::parse_number<std::uint64_t>(key, value);
    else if (key == "linear_decay") c.hyperparams.linear_decay = detail::parse_bool(key, value);
    else if (key == "weight_decay") c.hyperparams.weight_decay = detail::parse_number<double>(key, value);
    else if (key == "victim_timeout_ms") c.victim_timeout_ms = detail::parse_number<int>(key, value);
    else if (key == "budgets") c.sweep.budgets = detail::parse_budgets(value);
    else if (key == "policies") {
      c.sweep.policies.clear();
      for (auto p : split(value, ',')) c.sweep.policies.push_back(parse_policy(trim(p)));
    } else if (key == "sources") {
      c.sweep.source_sets.clear();
      for (auto s : split(value, ';'))
        if (!trim(s).empty()) c.sweep.source_sets.push_back(SourceSet::parse(trim(s)));
    } else if (key == "random_seeds") c.sweep.random_seeds = detail::parse_number<int>(key, value);
    else if (key == "allow_retarget") c.sweep.allow_retarget = detail::parse_bool(key, value);
    else if (key == "master_seed") c.sweep.master_seed = detail::parse_number<std::uint64_t>(key, value);
    else if (key == "threads") c.sweep.threads = detail::parse_number<unsigned>(key, value);
    else if (key == "dev_limit") c.dev_limit = detail::parse_number<std::size_t>(key, value);
    else if (key == "output_dir") c.output_dir = resolve(value);
    else throw DataError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  if (c.sweep.policies.empty()) throw DataError("config: no policies");
  if (c.sweep.source_sets.empty()) throw DataError("config: no source sets");
  if (c.sweep.random_seeds < 1) throw DataError("config: random_seeds must be at least 1");
  if (c.victim_timeout_ms <= 0) throw DataError("config: victim_timeout_ms must be positive");
  if (c.sweep.threads == 0) c.sweep.threads = 1;
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto c = parse_config(ss.str(), path.parent_path());
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) c.output_dir = env;
  return c;
}

/// Everything an experiment reads from disk, loaded and checked up front.
struct ExperimentInputs {
  std::shared_ptr<const Vocab> vocab;
  TypoGenerator typos;
  Corpus dev;
};

inline void require_file(const std::filesystem::path& p, const char* what) {
  if (p.empty()) throw DataError(std::string("config: no ") + what + " path");
  if (!std::filesystem::is_regular_file(p)) throw DataError(std::string(what) + " not found: " + p.string());
}

inline ExperimentInputs load_inputs(const ExperimentConfig& c) {
  ExperimentInputs in;
  require_file(c.vocab_path, "vocab");
  require_file(c.dev_path, "dev corpus");
  in.vocab = std::make_shared<const Vocab>(Vocab::load(c.vocab_path.string()));
  if (!c.layout_path.empty()) in.typos.layout = KeyboardLayout::load(c.layout_path.string());
  if (!c.misspellings_path.empty()) in.typos.tables.replace_w = load_misspellings(c.misspellings_path.string()).table;
  if (!c.pronounce_path.empty())
    in.typos.tables.pronounce = load_substitution_table(c.pronounce_path.string(), TypoSource::Pronounce);
  in.dev = load_tsv_corpus(c.dev_path.string());
  if (c.dev_limit > 0 && c.dev_limit < in.dev.examples.size()) in.dev.examples.resize(c.dev_limit);
  return in;
}

/// Trains (or loads) the built-in model described by `c`.
inline BuiltinModel builtin_model_for(const ExperimentConfig& c, const Vocab& vocab, std::ostream* log = nullptr) {
  if (!c.model_path.empty()) {
    auto m = BuiltinModel::load(c.model_path.string());
    if (m.vocab_hash() != vocab.hash()) throw DataError(c.model_path.string() + ": trained with a different vocabulary");
    return m;
  }
  require_file(c.train_path, "train corpus");
  const auto train_corpus = load_tsv_corpus(c.train_path.string());
  auto result = train(train_corpus.examples, vocab, c.hyperparams, train_corpus.num_classes);
  if (log) *log << "trained built-in model: train accuracy " << fixed1(100.0 * result.train_accuracy) << "%\n";
  return std::move(result.model);
}

/// The victim described by `c`. Remote victims are connected (and
/// handshaken) here, so an unreachable server fails before any attack.
inline std::unique_ptr<Victim> make_victim(const ExperimentConfig& c, const std::shared_ptr<const Vocab>& vocab,
                                           std::ostream* log = nullptr) {
  if (!c.remote()) return std::make_unique<BuiltinVictim>(vocab, builtin_model_for(c, *vocab, log));
  return std::make_unique<RemoteVictim>(VictimEndpoint::parse(c.victim, c.victim_timeout_ms));
}

inline std::string victim_label(const ExperimentConfig& c) {
  if (c.remote()) return c.victim;
  if (!c.model_path.empty()) return "builtin:" + c.model_path.filename().string();
  return "builtin:seed=" + std::to_string(c.hyperparams.seed);
}

/// Per-example transcripts of every sweep run, one JSON object per line.
inline std::string transcripts_jsonl(const SweepReport& report, const std::vector<LabeledExample>& corpus) {
  std::string out;
  for (const auto& run : report.runs)
    for (std::size_t i = 0; i < run.outcome.examples.size(); ++i) {
      ordered_json j{{"policy", to_string(run.policy)}, {"sources", run.sources.label()}, {"seed", run.seed}};
      const auto t = transcript_json(i, corpus[i], run.outcome.examples[i]);
      for (auto& [k, v] : t.items()) j[k] = v;
      out += j.dump() + "\n";
    }
  return out;
}

struct ExperimentOutputs {
  SweepReport report;
  std::vector<std::filesystem::path> files;
};

/// Runs the sweep of `c` against `victim` and writes report.json, report.tsv,
/// transcripts.jsonl and one plot series per curve into the output directory.
inline ExperimentOutputs run_experiment(const ExperimentConfig& c, const ExperimentInputs& in, const Victim& victim) {
  ExperimentOutputs out;
  out.report = sweep(victim, in.typos, in.dev.examples, c.sweep);
  out.report.meta.config_hash = c.hash();
  out.report.meta.vocab_hash = hex64(in.vocab->hash());
  out.report.meta.corpus_name = in.dev.name;
  out.report.meta.corpus_size = in.dev.size();
  out.report.meta.victim = victim_label(c);

  const auto& dir = c.output_dir;
  write_file(dir / "report.json", to_json(out.report).dump(2) + "\n");
  write_file(dir / "report.tsv", to_tsv(out.report));
  write_file(dir / "transcripts.jsonl", transcripts_jsonl(out.report, in.dev.examples));
  out.files = {dir / "report.json", dir / "report.tsv", dir / "transcripts.jsonl"};
  for (auto& p : emit_plot_data(out.report, dir / "series")) out.files.push_back(std::move(p));
  return out;
}

inline ExperimentOutputs run_experiment(const ExperimentConfig& c, std::ostream* log = nullptr) {
  const auto in = load_inputs(c);
  const auto victim = make_victim(c, in.vocab, log);
  return run_experiment(c, in, *victim);
}

/// Accuracy of a second victim on each cell's adversarial texts.
struct TransferCell {
  PolicyKind policy = PolicyKind::MaxGrad;
  std::string sources;
  int budget = 0;
  double attacked_accuracy = 0.0;  // source victim under attack
  double transfer_accuracy = 0.0;  // target victim on the same texts, mean over runs
};

struct TransferReport {
  double source_clean = 0.0;
  double target_clean = 0.0;
  std::vector<TransferCell> cells;
};

inline TransferReport transfer_report(const SweepReport& report, const std::vector<LabeledExample>& corpus,
                                      const Victim& target, unsigned threads = 1) {
  TransferReport out;
  out.source_clean = report.clean_accuracy;
  out.target_clean = transfer_eval(corpus, target, threads);
  for (const auto& cell : report.cells) {
    TransferCell t{cell.policy, cell.sources, cell.budget, cell.accuracy, 0.0};
    std::vector<double> accs;
    for (const auto& run : report.runs)
      if (run.policy == cell.policy && run.sources.label() == cell.sources)
        accs.push_back(transfer_eval(run.outcome.adversarial_set(corpus, cell.budget), target, threads));
    t.transfer_accuracy = mean_and_std(accs).first;
    out.cells.push_back(std::move(t));
  }
  return out;
}

inline std::string to_tsv(const TransferReport& r) {
  std::string out = "# source_clean_accuracy\t" + fixed1(100.0 * r.source_clean) + "\n";
  out += "# target_clean_accuracy\t" + fixed1(100.0 * r.target_clean) + "\n";
  out += "policy\tsources\tK\tattacked\ttransfer\n";
  for (const auto& c : r.cells)
    out += std::string(to_string(c.policy)) + "\t" + c.sources + "\t" + std::to_string(c.budget) + "\t" +
           fixed1(100.0 * c.attacked_accuracy) + "\t" + fixed1(100.0 * c.transfer_accuracy) + "\n";
  return out;
}

}  // namespace kbtypo
