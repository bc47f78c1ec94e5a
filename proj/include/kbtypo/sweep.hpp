#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "kbtypo/attack.hpp"
#include "kbtypo/common.hpp"

namespace kbtypo {

struct SweepSpec {
  std::vector<int> budgets{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<PolicyKind> policies{PolicyKind::MaxGrad, PolicyKind::MinGrad, PolicyKind::Random};
  std::vector<SourceSet> source_sets{SourceSet::all()};
  int random_seeds = 5;
  bool allow_retarget = false;
  std::uint64_t master_seed = 2020;
  unsigned threads = 1;
};

/// Everything needed to reproduce a report.
struct ReportMeta {
  std::string config_hash;
  std::uint64_t master_seed = 0;
  std::string vocab_hash;
  std::string corpus_name;
  std::size_t corpus_size = 0;
  std::string victim;
};

struct SweepCell {
  PolicyKind policy = PolicyKind::MaxGrad;
  std::string sources;
  int budget = 0;
  double accuracy = 0.0;  // mean over runs
  double std_dev = 0.0;   // population standard deviation over runs
  std::vector<double> run_accuracies;
  double flip_rate = 0.0;  // mean over runs
  std::size_t attacked = 0;
  std::size_t victim_errors = 0;
};

/// One attack_corpus pass at the largest budget of the sweep. Smaller
/// budgets are read off its transcripts: the greedy path for budget K is the
/// first K iterations of the path for any larger budget.
struct SweepRun {
  PolicyKind policy = PolicyKind::MaxGrad;
  SourceSet sources;
  std::uint64_t seed = 0;
  CorpusOutcome outcome;
};

struct SweepReport {
  ReportMeta meta;
  double clean_accuracy = 0.0;
  std::vector<SweepCell> cells;
  std::vector<SweepRun> runs;  // not serialized into the report files

  const SweepCell* find(PolicyKind policy, const std::string& sources, int budget) const {
    for (const auto& c : cells)
      if (c.policy == policy && c.sources == sources && c.budget == budget) return &c;
    return nullptr;
  }
};

inline std::uint64_t random_policy_seed(std::uint64_t master_seed, int run) {
  return splitmix64(master_seed + static_cast<std::uint64_t>(run));
}

inline std::pair<double, double> mean_and_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / static_cast<double>(xs.size()))};
}

/// Clean-accuracy pass with no attacks, in the same shape as attack_corpus.
inline CorpusOutcome evaluate_clean(const Victim& victim, const std::vector<LabeledExample>& corpus, unsigned threads) {
  CorpusOutcome out;
  out.examples.resize(corpus.size());
  parallel_for(corpus.size(), victim.concurrent() ? threads : 1u, [&](std::size_t i) {
    auto& slot = out.examples[i];
    try {
      const auto p = victim.predict(corpus[i].text);
      validate_prediction(p, victim.num_classes());
      slot.status = p.label == corpus[i].label ? ExampleStatus::Attacked : ExampleStatus::Misclassified;
      slot.result.original_text = corpus[i].text;
      slot.result.final_text = corpus[i].text;
      slot.result.original_prediction = p;
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

/// Accuracy under attack over budgets x policies x source sets. Random
/// cells average `random_seeds` independently seeded runs.
inline SweepReport sweep(const Victim& victim, const TypoGenerator& typos, const std::vector<LabeledExample>& corpus,
                         const SweepSpec& spec) {
  if (spec.budgets.empty() || spec.policies.empty() || spec.source_sets.empty())
    throw ContractViolation("sweep: every axis needs at least one value");
  if (corpus.empty()) throw ContractViolation("sweep: empty corpus");
  for (int k : spec.budgets)
    if (k < 0) throw ContractViolation("sweep: negative budget");
  const int max_budget = *std::max_element(spec.budgets.begin(), spec.budgets.end());

  SweepReport report;
  report.meta.master_seed = spec.master_seed;
  report.meta.corpus_size = corpus.size();

  const auto clean = evaluate_clean(victim, corpus, spec.threads);
  report.clean_accuracy = clean.clean_accuracy();

  for (auto policy : spec.policies) {
    if (policy != PolicyKind::Random && !victim.supports_gradients())
      throw ContractViolation(std::string("policy ") + std::string(to_string(policy)) +
                              " needs gradients, which this victim does not provide");
    for (const auto& sources : spec.source_sets) {
      const int runs = policy == PolicyKind::Random ? std::max(1, spec.random_seeds) : 1;
      const std::size_t first_run = report.runs.size();
      for (int r = 0; r < runs; ++r) {
        SweepRun run{policy, sources, policy == PolicyKind::Random ? random_policy_seed(spec.master_seed, r) : spec.master_seed, {}};
        if (max_budget == 0) {
          run.outcome = clean;
        } else {
          AttackConfig config{.budget = max_budget,
                              .policy = {policy, run.seed},
                              .sources = sources,
                              .allow_retarget = spec.allow_retarget};
          run.outcome = attack_corpus(victim, typos, corpus, config, spec.threads);
        }
        report.runs.push_back(std::move(run));
      }
      for (int k : spec.budgets) {
        SweepCell cell{.policy = policy, .sources = sources.label(), .budget = k};
        std::vector<double> flips;
        for (std::size_t r = first_run; r < report.runs.size(); ++r) {
          const auto& o = report.runs[r].outcome;
          cell.run_accuracies.push_back(o.accuracy_at(k));
          flips.push_back(o.flip_rate_at(k));
          cell.attacked = std::max(cell.attacked, o.attacked);
          cell.victim_errors = std::max(cell.victim_errors, o.victim_errors);
        }
        std::tie(cell.accuracy, cell.std_dev) = mean_and_std(cell.run_accuracies);
        cell.flip_rate = mean_and_std(flips).first;
        report.cells.push_back(std::move(cell));
      }
    }
  }
  return report;
}

}  // namespace kbtypo
