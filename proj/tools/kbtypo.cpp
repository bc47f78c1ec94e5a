// kbtypo: keyboard-typo adversarial attacks and robustness sweeps.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 remote-victim error.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "kbtypo/kbtypo.hpp"

namespace {

using namespace kbtypo;

int cmd_train(const ExperimentConfig& c, const std::string& out_path) {
  const auto in = load_inputs(c);
  require_file(c.train_path, "train corpus");
  const auto train_corpus = load_tsv_corpus(c.train_path.string());
  auto result = train(train_corpus.examples, *in.vocab, c.hyperparams, train_corpus.num_classes,
                      [](int epoch, const BuiltinModel&) { std::cerr << "epoch " << epoch << "\n"; });
  const BuiltinVictim victim(in.vocab, result.model);
  const double dev_acc = transfer_eval(in.dev.examples, victim, c.sweep.threads);
  std::filesystem::path out = out_path.empty() ? c.output_dir / "model.bin" : std::filesystem::path(out_path);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  result.model.save(out.string());
  std::cout << "train_accuracy\t" << fixed1(100.0 * result.train_accuracy) << "\n"
            << "dev_accuracy\t" << fixed1(100.0 * dev_acc) << "\n"
            << "checkpoint\t" << out.string() << "\n";
  return 0;
}

int cmd_attack(const ExperimentConfig& c, const std::string& text, int label, const std::string& policy, int budget,
               const std::string& sources, std::uint64_t seed) {
  const auto in = load_inputs(c);
  const auto victim = make_victim(c, in.vocab, &std::cerr);
  const LabeledExample ex{text, label};
  const auto clean = victim->predict(text);
  if (clean.label != label) {
    std::cout << "victim already predicts " << clean.label << " for gold " << label << "; nothing to attack\n";
    return 0;
  }
  AttackConfig config{.budget = budget,
                      .policy = {parse_policy(policy), seed},
                      .sources = SourceSet::parse(sources),
                      .allow_retarget = c.sweep.allow_retarget};
  const auto r = attack(*victim, in.typos, ex, config);
  std::cout << "original\t" << r.original_text << "\n";
  for (std::size_t i = 0; i < r.transcript.size(); ++i) {
    const auto& it = r.transcript[i];
    std::cout << "iteration " << i + 1 << "\t";
    if (!it.slot) {
      std::cout << "no eligible word\n";
      continue;
    }
    std::cout << "word '" << it.word << "' (" << it.candidate_count << " candidates)";
    if (!it.chosen.empty())
      std::cout << " -> '" << it.chosen << "' [" << to_string(*it.source) << "] score " << round_trip(it.score)
                << (it.flipped ? " FLIPPED" : "");
    std::cout << "\n\t" << it.text_after << "\n";
  }
  std::cout << "result\t" << (r.success ? "success" : "failure") << " (" << to_string(r.termination) << ")\n";
  if (r.adversarial_label) std::cout << "adversarial_label\t" << *r.adversarial_label << "\n";
  std::cout << "final\t" << r.final_text << "\n";
  return 0;
}

int cmd_sweep(const ExperimentConfig& c) {
  const auto out = run_experiment(c, &std::cerr);
  std::cout << to_tsv(out.report);
  for (const auto& f : out.files) std::cerr << "wrote " << f.string() << "\n";
  return 0;
}

int cmd_transfer(const ExperimentConfig& c, const std::string& target_model, const std::string& target_victim,
                 std::uint64_t target_seed, bool have_seed) {
  const auto in = load_inputs(c);
  const auto source = make_victim(c, in.vocab, &std::cerr);
  ExperimentConfig tc = c;
  if (!target_victim.empty()) {
    tc.victim = target_victim;
  } else if (!target_model.empty()) {
    tc.victim = "builtin";
    tc.model_path = target_model;
  } else if (have_seed) {
    tc.victim = "builtin";
    tc.model_path.clear();
    tc.hyperparams.seed = target_seed;
  } else {
    throw CLI::ValidationError("transfer", "one of --target-model, --target-victim, --target-seed is required");
  }
  const auto target = make_victim(tc, in.vocab, &std::cerr);
  const auto out = run_experiment(c, in, *source);
  const auto tr = transfer_report(out.report, in.dev.examples, *target, c.sweep.threads);
  write_file(c.output_dir / "transfer.tsv", to_tsv(tr));
  std::cout << to_tsv(tr);
  return 0;
}

int cmd_report(const std::string& input, const std::string& format, const std::string& plot_dir) {
  const auto report = load_report(input);
  if (format == "json")
    std::cout << to_json(report).dump(2) << "\n";
  else
    std::cout << to_tsv(report);
  if (!plot_dir.empty())
    for (const auto& p : emit_plot_data(report, plot_dir)) std::cerr << "wrote " << p.string() << "\n";
  return 0;
}

int cmd_serve(const ExperimentConfig& c) {
  const auto in = load_inputs(c);
  const auto victim = make_victim(c, in.vocab, &std::cerr);
  ProtocolServer server(*victim, c.vocab_path.stem().string());
  server.run(std::cin, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keyboard-typo adversarial attacks against text classifiers"};
  app.require_subcommand(1);
  std::string config_path;
  auto add_config = [&](CLI::App* sub) { sub->add_option("-c,--config", config_path, "experiment config file")->required(); };

  auto* train_cmd = app.add_subcommand("train", "train the built-in model and save a checkpoint");
  add_config(train_cmd);
  std::string model_out;
  train_cmd->add_option("-o,--out", model_out, "checkpoint path (default <output_dir>/model.bin)");

  auto* attack_cmd = app.add_subcommand("attack", "attack one sentence and print the transcript");
  add_config(attack_cmd);
  std::string text, policy = "max_grad", sources = "all";
  int label = 0, budget = 1;
  std::uint64_t seed = 0;
  attack_cmd->add_option("-t,--text", text, "sentence to attack")->required();
  attack_cmd->add_option("-l,--label", label, "gold label")->required();
  attack_cmd->add_option("-p,--policy", policy, "max_grad, min_grad or random");
  attack_cmd->add_option("-k,--budget", budget, "maximum number of typos")->check(CLI::PositiveNumber);
  attack_cmd->add_option("-s,--sources", sources, "typo sources, e.g. all, insertion+swap, wiki");
  attack_cmd->add_option("--seed", seed, "random policy seed");

  auto* sweep_cmd = app.add_subcommand("sweep", "accuracy under attack over budgets, policies and sources");
  add_config(sweep_cmd);

  auto* transfer_cmd = app.add_subcommand("transfer", "evaluate the sweep's adversarial texts on a second victim");
  add_config(transfer_cmd);
  std::string target_model, target_victim;
  std::uint64_t target_seed = 0;
  transfer_cmd->add_option("--target-model", target_model, "checkpoint of the target built-in model");
  transfer_cmd->add_option("--target-victim", target_victim, "remote target (stdio:<cmd> or tcp:<host>:<port>)");
  auto* seed_opt = transfer_cmd->add_option("--target-seed", target_seed, "train the target built-in model with this seed");

  auto* report_cmd = app.add_subcommand("report", "re-emit a saved report.json");
  std::string input, format = "tsv", plot_dir;
  report_cmd->add_option("input", input, "report.json")->required();
  report_cmd->add_option("-f,--format", format, "tsv or json")->check(CLI::IsMember({"tsv", "json"}));
  report_cmd->add_option("--plot-dir", plot_dir, "write one series file per curve here");

  auto* serve_cmd = app.add_subcommand("serve", "serve the configured victim over the line protocol on stdin/stdout");
  add_config(serve_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*report_cmd) return cmd_report(input, format, plot_dir);
    const auto config = load_config(config_path);
    if (*train_cmd) return cmd_train(config, model_out);
    if (*attack_cmd) return cmd_attack(config, text, label, policy, budget, sources, seed);
    if (*sweep_cmd) return cmd_sweep(config);
    if (*transfer_cmd) return cmd_transfer(config, target_model, target_victim, target_seed, seed_opt->count() > 0);
    if (*serve_cmd) return cmd_serve(config);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "kbtypo: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "kbtypo: data error: " << e.what() << "\n";
    return 2;
  } catch (const RemoteError& e) {
    std::cerr << "kbtypo: remote victim error: " << e.what() << "\n";
    return 3;
  } catch (const ContractViolation& e) {
    std::cerr << "kbtypo: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
