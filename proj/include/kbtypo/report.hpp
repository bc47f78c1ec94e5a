#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "kbtypo/common.hpp"
#include "kbtypo/sweep.hpp"

namespace kbtypo {

using ordered_json = nlohmann::ordered_json;

inline std::string fixed1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

inline std::string round_trip(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline ordered_json meta_json(const ReportMeta& m) {
  return ordered_json{{"config_hash", m.config_hash},   {"master_seed", m.master_seed},
                      {"vocab_hash", m.vocab_hash},     {"corpus", m.corpus_name},
                      {"corpus_size", m.corpus_size},   {"victim", m.victim}};
}

inline ordered_json to_json(const SweepReport& report) {
  ordered_json cells = ordered_json::array();
  for (const auto& c : report.cells)
    cells.push_back({{"policy", to_string(c.policy)},
                     {"sources", c.sources},
                     {"K", c.budget},
                     {"accuracy", c.accuracy},
                     {"std", c.std_dev},
                     {"run_accuracies", c.run_accuracies},
                     {"flip_rate", c.flip_rate},
                     {"attacked", c.attacked},
                     {"victim_errors", c.victim_errors}});
  return ordered_json{{"meta", meta_json(report.meta)}, {"clean_accuracy", report.clean_accuracy}, {"cells", cells}};
}

inline SweepReport report_from_json(const nlohmann::json& j) {
  try {
    SweepReport r;
    const auto& m = j.at("meta");
    r.meta = {m.at("config_hash").get<std::string>(), m.at("master_seed").get<std::uint64_t>(),
              m.at("vocab_hash").get<std::string>(),  m.at("corpus").get<std::string>(),
              m.at("corpus_size").get<std::size_t>(), m.at("victim").get<std::string>()};
    r.clean_accuracy = j.at("clean_accuracy").get<double>();
    for (const auto& c : j.at("cells"))
      r.cells.push_back({.policy = parse_policy(c.at("policy").get<std::string>()),
                         .sources = c.at("sources").get<std::string>(),
                         .budget = c.at("K").get<int>(),
                         .accuracy = c.at("accuracy").get<double>(),
                         .std_dev = c.at("std").get<double>(),
                         .run_accuracies = c.at("run_accuracies").get<std::vector<double>>(),
                         .flip_rate = c.at("flip_rate").get<double>(),
                         .attacked = c.at("attacked").get<std::size_t>(),
                         .victim_errors = c.at("victim_errors").get<std::size_t>()});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed sweep report: ") + e.what());
  }
}

inline SweepReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report " + path);
  try {
    return report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

/// Metadata as '#' lines, then one row per (policy, sources, K). Accuracy,
/// std and flip rate are percentages with one decimal.
inline std::string to_tsv(const SweepReport& report) {
  const auto& m = report.meta;
  std::string out;
  out += "# config_hash\t" + m.config_hash + "\n";
  out += "# master_seed\t" + std::to_string(m.master_seed) + "\n";
  out += "# vocab_hash\t" + m.vocab_hash + "\n";
  out += "# corpus\t" + m.corpus_name + "\t" + std::to_string(m.corpus_size) + "\n";
  out += "# victim\t" + m.victim + "\n";
  out += "# clean_accuracy\t" + fixed1(100.0 * report.clean_accuracy) + "\n";
  out += "policy\tsources\tK\taccuracy\tstd\tflip_rate\tattacked\tvictim_errors\truns\n";
  for (const auto& c : report.cells) {
    out += std::string(to_string(c.policy)) + "\t" + c.sources + "\t" + std::to_string(c.budget) + "\t" +
           fixed1(100.0 * c.accuracy) + "\t" + fixed1(100.0 * c.std_dev) + "\t" + fixed1(100.0 * c.flip_rate) + "\t" +
           std::to_string(c.attacked) + "\t" + std::to_string(c.victim_errors) + "\t" +
           std::to_string(c.run_accuracies.size()) + "\n";
  }
  return out;
}

inline ordered_json transcript_json(std::size_t index, const LabeledExample& ex, const ExampleOutcome& o) {
  ordered_json j{{"index", index}, {"gold", ex.label}};
  switch (o.status) {
    case ExampleStatus::Misclassified: j["status"] = "misclassified"; return j;
    case ExampleStatus::VictimError: j["status"] = "victim_error"; j["error"] = o.error; return j;
    case ExampleStatus::Attacked: j["status"] = "attacked"; break;
  }
  const auto& r = o.result;
  j["success"] = r.success;
  j["success_iteration"] = r.success_iteration;
  j["termination"] = to_string(r.termination);
  j["original_text"] = r.original_text;
  j["final_text"] = r.final_text;
  if (r.adversarial_label) j["adversarial_label"] = *r.adversarial_label;
  j["original_probs"] = r.original_prediction.probs;
  ordered_json iters = ordered_json::array();
  for (const auto& it : r.transcript) {
    ordered_json e;
    e["slot"] = it.slot ? ordered_json(*it.slot) : ordered_json(nullptr);
    e["word"] = it.word;
    e["candidates"] = it.candidate_count;
    e["chosen"] = it.chosen;
    e["source"] = it.source ? ordered_json(to_string(*it.source)) : ordered_json(nullptr);
    e["score"] = it.score;
    e["flipped"] = it.flipped;
    e["text"] = it.text_after;
    iters.push_back(std::move(e));
  }
  j["iterations"] = std::move(iters);
  return j;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
  if (!out) throw DataError("failed writing " + path.string());
}

inline std::string series_name(PolicyKind policy, const std::string& sources) {
  return "series_" + std::string(to_string(policy)) + "_" + sources + ".tsv";
}

/// One "K accuracy std" file per (policy, sources) curve, values exactly as
/// stored in the report cells. Returns the written paths in curve order.
inline std::vector<std::filesystem::path> emit_plot_data(const SweepReport& report, const std::filesystem::path& dir) {
  if (report.cells.empty()) throw ContractViolation("emit_plot_data: empty report");
  std::vector<std::pair<PolicyKind, std::string>> curves;
  for (const auto& c : report.cells) {
    std::pair<PolicyKind, std::string> key{c.policy, c.sources};
    if (std::find(curves.begin(), curves.end(), key) == curves.end()) curves.push_back(key);
  }
  std::vector<std::filesystem::path> written;
  for (const auto& [policy, sources] : curves) {
    std::string body = "K\taccuracy\tstd\n";
    for (const auto& c : report.cells)
      if (c.policy == policy && c.sources == sources)
        body += std::to_string(c.budget) + "\t" + round_trip(c.accuracy) + "\t" + round_trip(c.std_dev) + "\n";
    auto path = dir / series_name(policy, sources);
    write_file(path, body);
    written.push_back(path);
  }
  return written;
}

}  // namespace kbtypo
