#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "kbtypo/common.hpp"
#include "kbtypo/keyboard.hpp"
#include "kbtypo/typo.hpp"
#include "kbtypo/victim.hpp"

namespace kbtypo {

enum class PolicyKind : std::uint8_t { MaxGrad, MinGrad, Random };

inline std::string_view to_string(PolicyKind p) {
  switch (p) {
    case PolicyKind::MaxGrad: return "max_grad";
    case PolicyKind::MinGrad: return "min_grad";
    case PolicyKind::Random: return "random";
  }
  return "?";
}

inline PolicyKind parse_policy(std::string_view name) {
  for (auto p : {PolicyKind::MaxGrad, PolicyKind::MinGrad, PolicyKind::Random})
    if (to_string(p) == name) return p;
  throw DataError("unknown policy '" + std::string(name) + "'");
}

struct AttackPolicy {
  PolicyKind kind = PolicyKind::MaxGrad;
  std::uint64_t rng_seed = 0;  // Random only
};

struct AttackConfig {
  int budget = 1;
  AttackPolicy policy;
  SourceSet sources = SourceSet::all();
  bool allow_retarget = false;
};

inline void validate_config(const AttackConfig& config, const Victim& victim) {
  if (config.budget < 1) throw ContractViolation("attack budget must be at least 1");
  if (config.sources.empty()) throw ContractViolation("attack needs at least one typo source");
  if (config.policy.kind != PolicyKind::Random && !victim.supports_gradients())
    throw ContractViolation(std::string("policy ") + std::string(to_string(config.policy.kind)) +
                            " needs gradients, which this victim does not provide; use random");
}

/// Keyboard layout plus the two substitution tables.
struct TypoGenerator {
  KeyboardLayout layout = KeyboardLayout::qwerty();
  TypoTables tables;

  std::vector<TypoCandidate> candidates(std::string_view word, const SourceSet& sources) const {
    return keyboard_typo(word, sources, layout, tables);
  }
};

/// A sentence as whitespace-delimited slots plus the exact separators around
/// them. A slot keeps its identity after a space is inserted into it.
class EditableText {
 public:
  explicit EditableText(std::string_view text) {
    std::size_t prev = 0;
    for (auto c : whitespace_chunks(text)) {
      gaps_.emplace_back(text.substr(prev, c.begin - prev));
      slots_.emplace_back(text.substr(c.begin, c.end - c.begin));
      prev = c.end;
    }
    gaps_.emplace_back(text.substr(prev));
  }

  std::size_t size() const { return slots_.size(); }
  const std::string& slot(std::size_t i) const { return slots_.at(i); }
  void set(std::size_t i, std::string value) { slots_.at(i) = std::move(value); }

  std::string str() const { return with(slots_.size(), {}); }

  /// The text with slot `i` replaced by `value` (no replacement when i == size()).
  std::string with(std::size_t i, std::string_view value) const {
    std::string out = gaps_[0];
    for (std::size_t k = 0; k < slots_.size(); ++k) {
      out += (k == i) ? value : std::string_view(slots_[k]);
      out += gaps_[k + 1];
    }
    return out;
  }

  /// For each whitespace chunk of str(), the slot containing it.
  std::vector<int> chunk_to_slot() const {
    std::vector<int> out;
    for (std::size_t k = 0; k < slots_.size(); ++k) {
      auto n = whitespace_chunks(slots_[k]).size();
      out.insert(out.end(), n, static_cast<int>(k));
    }
    return out;
  }

 private:
  std::vector<std::string> slots_;
  std::vector<std::string> gaps_;
};

/// Picks the slot to edit. Gradient policies take the owner of the eligible
/// component with the largest (or smallest) norm, ties to the lowest component
/// index; Random draws uniformly over eligible slots.
template <class Rng>
std::optional<std::size_t> select_target(const GradientReport* report, std::span<const int> component_slot,
                                         const std::vector<bool>& eligible, PolicyKind policy, Rng& rng) {
  if (policy == PolicyKind::Random) {
    std::vector<std::size_t> pool;
    for (std::size_t s = 0; s < eligible.size(); ++s)
      if (eligible[s]) pool.push_back(s);
    if (pool.empty()) return std::nullopt;
    return pool[uniform_index(rng, pool.size())];
  }
  if (!report) throw ContractViolation("select_target: gradient policy without a gradient report");
  std::optional<std::size_t> best;
  double best_norm = 0.0;
  for (std::size_t i = 0; i < report->size(); ++i) {
    const int s = component_slot[i];
    if (s < 0 || !eligible[static_cast<std::size_t>(s)]) continue;
    const double n = report->component_norms[i];
    const bool better = !best || (policy == PolicyKind::MaxGrad ? n > best_norm : n < best_norm);
    if (better) {
      best = static_cast<std::size_t>(s);
      best_norm = n;
    }
  }
  return best;
}

enum class Termination : std::uint8_t { Flipped, BudgetExhausted, NoTarget, NoCandidates };

inline std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::Flipped: return "flipped";
    case Termination::BudgetExhausted: return "budget exhausted";
    case Termination::NoTarget: return "exhausted targets";
    case Termination::NoCandidates: return "no candidates";
  }
  return "?";
}

struct IterationRecord {
  std::optional<std::size_t> slot;  // absent when no target was eligible
  std::string word;
  std::size_t candidate_count = 0;
  std::string chosen;  // empty when no edit was made
  std::optional<TypoSource> source;
  double score = -1.0;  // 1 - p(gold) of the chosen candidate
  bool flipped = false;
  std::string text_after;
};

struct AttackResult {
  bool success = false;
  std::string original_text;
  std::string final_text;
  std::optional<int> adversarial_label;
  std::vector<IterationRecord> transcript;
  Prediction original_prediction;
  int success_iteration = 0;  // 1-based; 0 when unsuccessful
  Termination termination = Termination::BudgetExhausted;

  /// The text after the first `budget` iterations; an attack run with a
  /// smaller budget ends on exactly this text.
  const std::string& text_at_budget(int budget) const {
    if (budget <= 0 || transcript.empty()) return original_text;
    return transcript[std::min(transcript.size(), static_cast<std::size_t>(budget)) - 1].text_after;
  }
  bool succeeded_within(int budget) const { return success && success_iteration <= budget; }
};

/// Greedy keyboard-typo attack with budget `config.budget`. Each iteration
/// re-scores the current text, picks a target word, and tries every typo
/// candidate for it: the first candidate that changes the predicted label
/// ends the attack; otherwise the candidate with the highest 1 - p(gold) is
/// kept and the next iteration starts from it.
inline AttackResult attack(const Victim& victim, const TypoGenerator& typos, const LabeledExample& example,
                           const AttackConfig& config) {
  validate_config(config, victim);
  if (example.label < 0 || example.label >= victim.num_classes())
    throw ContractViolation("attack: gold label out of range");
  const int gold = example.label;
  const auto gold_idx = static_cast<std::size_t>(gold);

  AttackResult result;
  result.original_text = example.text;
  result.original_prediction = victim.predict(example.text);
  validate_prediction(result.original_prediction, victim.num_classes());
  if (result.original_prediction.label != gold)
    throw ContractViolation("attack: victim already misclassifies the input");

  EditableText state(example.text);
  std::vector<bool> modified(state.size(), false);
  std::mt19937_64 rng(config.policy.rng_seed);
  result.final_text = example.text;

  for (int iter = 0; iter < config.budget; ++iter) {
    IterationRecord rec;
    const std::string current = state.str();
    rec.text_after = current;

    std::vector<bool> eligible(state.size());
    for (std::size_t s = 0; s < state.size(); ++s)
      eligible[s] = has_alnum(state.slot(s)) && (config.allow_retarget || !modified[s]);

    std::optional<GradientReport> report;
    std::vector<int> component_slot;
    if (config.policy.kind != PolicyKind::Random) {
      report = victim.grad_norms(current, gold);
      validate_report(*report);
      const auto chunk_slot = state.chunk_to_slot();
      for (int c : report->chunk_index) {
        if (c >= static_cast<int>(chunk_slot.size()))
          throw VictimError("gradient report references word " + std::to_string(c) + " of " +
                            std::to_string(chunk_slot.size()));
        component_slot.push_back(c < 0 ? -1 : chunk_slot[static_cast<std::size_t>(c)]);
      }
    }

    const auto target = select_target(report ? &*report : nullptr, component_slot, eligible, config.policy.kind, rng);
    if (!target) {
      result.transcript.push_back(std::move(rec));
      result.termination = Termination::NoTarget;
      return result;
    }
    rec.slot = target;
    rec.word = state.slot(*target);
    const auto cands = typos.candidates(rec.word, config.sources);
    rec.candidate_count = cands.size();
    if (cands.empty()) {
      result.transcript.push_back(std::move(rec));
      result.termination = Termination::NoCandidates;
      return result;
    }

    std::size_t best = 0;
    double score_h = -1.0;
    for (std::size_t k = 0; k < cands.size(); ++k) {
      std::string x_typo = state.with(*target, cands[k].variant);
      const auto p = victim.predict(x_typo);
      validate_prediction(p, victim.num_classes());
      if (p.label != gold) {
        rec.chosen = cands[k].variant;
        rec.source = cands[k].source;
        rec.score = 1.0 - p.probs[gold_idx];
        rec.flipped = true;
        rec.text_after = x_typo;
        result.transcript.push_back(std::move(rec));
        result.success = true;
        result.final_text = std::move(x_typo);
        result.adversarial_label = p.label;
        result.success_iteration = iter + 1;
        result.termination = Termination::Flipped;
        return result;
      }
      const double score = 1.0 - p.probs[gold_idx];
      if (score > score_h) {
        score_h = score;
        best = k;
      }
    }
    state.set(*target, cands[best].variant);
    modified[*target] = true;
    rec.chosen = cands[best].variant;
    rec.source = cands[best].source;
    rec.score = score_h;
    rec.text_after = state.str();
    result.final_text = rec.text_after;
    result.transcript.push_back(std::move(rec));
  }
  result.termination = Termination::BudgetExhausted;
  return result;
}

enum class ExampleStatus : std::uint8_t { Misclassified, Attacked, VictimError };

struct ExampleOutcome {
  ExampleStatus status = ExampleStatus::Misclassified;
  AttackResult result;  // meaningful when Attacked
  std::string error;    // VictimError message
};

struct CorpusOutcome {
  std::vector<ExampleOutcome> examples;
  std::size_t attacked = 0;
  std::size_t victim_errors = 0;

  std::size_t denominator() const { return examples.size() - victim_errors; }

  double clean_accuracy() const { return ratio(attacked, denominator()); }

  /// Fraction of usable examples still classified correctly after attacks of
  /// budget `budget`.
  double accuracy_at(int budget) const {
    std::size_t survived = 0;
    for (const auto& e : examples)
      if (e.status == ExampleStatus::Attacked && !e.result.succeeded_within(budget)) ++survived;
    return ratio(survived, denominator());
  }

  double flip_rate_at(int budget) const {
    std::size_t flipped = 0;
    for (const auto& e : examples)
      if (e.status == ExampleStatus::Attacked && e.result.succeeded_within(budget)) ++flipped;
    return ratio(flipped, attacked);
  }

  /// (text, gold) pairs after budget `budget`; misclassified inputs are left
  /// as they were, victim-error examples are dropped.
  std::vector<LabeledExample> adversarial_set(const std::vector<LabeledExample>& corpus, int budget) const {
    std::vector<LabeledExample> out;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      if (examples[i].status == ExampleStatus::VictimError) continue;
      const auto& text = examples[i].status == ExampleStatus::Attacked ? examples[i].result.text_at_budget(budget)
                                                                       : corpus[i].text;
      out.push_back({text, corpus[i].label});
    }
    return out;
  }

 private:
  static double ratio(std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); }
};

/// Per-example seed for Random attacks; independent of scheduling.
inline std::uint64_t example_seed(std::uint64_t policy_seed, std::size_t index) {
  return splitmix64(policy_seed ^ splitmix64(static_cast<std::uint64_t>(index) + 1));
}

inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < std::min<std::size_t>(threads, n); ++t)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
          try {
            body(i);
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
            next = n;
          }
        }
      });
  }
  if (failure) std::rethrow_exception(failure);
}

inline unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Attacks every correctly classified example of `corpus`. Misclassified
/// inputs count as errors and are left alone; examples where the victim
/// returns an invalid answer are reported separately and excluded from
/// accuracy denominators.
inline CorpusOutcome attack_corpus(const Victim& victim, const TypoGenerator& typos,
                                   const std::vector<LabeledExample>& corpus, const AttackConfig& config,
                                   unsigned threads = 1) {
  validate_config(config, victim);
  CorpusOutcome out;
  out.examples.resize(corpus.size());
  parallel_for(corpus.size(), victim.concurrent() ? threads : 1u, [&](std::size_t i) {
    auto& slot = out.examples[i];
    try {
      const auto clean = victim.predict(corpus[i].text);
      validate_prediction(clean, victim.num_classes());
      if (clean.label != corpus[i].label) {
        slot.status = ExampleStatus::Misclassified;
        return;
      }
      AttackConfig local = config;
      local.policy.rng_seed = example_seed(config.policy.rng_seed, i);
      slot.result = attack(victim, typos, corpus[i], local);
      slot.status = ExampleStatus::Attacked;
    } catch (const VictimError& e) {
      slot.status = ExampleStatus::VictimError;
      slot.error = e.what();
    }
  });
  for (const auto& e : out.examples) {
    out.attacked += e.status == ExampleStatus::Attacked;
    out.victim_errors += e.status == ExampleStatus::VictimError;
  }
  return out;
}

/// Plain accuracy of `victim` on (possibly perturbed) texts. Examples the
/// victim cannot answer are left out of the denominator.
inline double transfer_eval(const std::vector<LabeledExample>& adv_examples, const Victim& victim,
                            unsigned threads = 1) {
  std::vector<int> verdict(adv_examples.size(), -1);
  parallel_for(adv_examples.size(), victim.concurrent() ? threads : 1u, [&](std::size_t i) {
    try {
      const auto p = victim.predict(adv_examples[i].text);
      validate_prediction(p, victim.num_classes());
      verdict[i] = p.label == adv_examples[i].label ? 1 : 0;
    } catch (const VictimError&) {
    }
  });
  std::size_t usable = 0, correct = 0;
  for (int v : verdict) {
    usable += v >= 0;
    correct += v == 1;
  }
  return usable == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(usable);
}

}  // namespace kbtypo
