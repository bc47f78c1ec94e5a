#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_support.hpp"

using namespace kbtypo;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A config over a small training slice so the whole pipeline runs in seconds.
fs::path small_config(const std::string& name, const std::string& extra = {}) {
  const fs::path dir = fs::path(::testing::TempDir()) / name;
  fs::create_directories(dir);
  const auto& train = fixtures::rt_train().examples;
  write_file(dir / "train.tsv", to_tsv({train.begin(), train.begin() + 1500}));
  std::ofstream(dir / "experiment.conf") << "# small end-to-end run\n"
                                         << "train = train.tsv\n"
                                         << "dev = " << fixtures::data_path("rt/dev.tsv") << "\n"
                                         << "vocab = " << fixtures::data_path("vocab/bert-base-uncased.txt") << "\n"
                                         << "misspellings = " << fixtures::data_path("misspellings_en.txt") << "\n"
                                         << "pronounce = " << fixtures::data_path("pronounce_en.tsv") << "\n"
                                         << "embed_dim = 16\nhidden_dim = 16\nepochs = 3\n"
                                         << "budgets = 0..3\nrandom_seeds = 2\ndev_limit = 40\n"
                                         << "output_dir = out\n"
                                         << extra;
  return dir / "experiment.conf";
}

int run_cli(const std::string& args, const fs::path& out_file) {
  const std::string cmd = std::string(KBTYPO_CLI) + " " + args + " > " + out_file.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, ParsesKeysAndRanges) {
  const auto c = parse_config(
      "train = a/train.tsv\n"
      "vocab=/abs/vocab.txt  # trailing comment\n"
      "budgets = 0, 2..4\n"
      "policies = max_grad, random\n"
      "sources = insertion; wiki ; all\n"
      "random_seeds = 5\nmaster_seed = 7\nlinear_decay = no\nweight_decay = 0.01\n",
      "/base");
  EXPECT_EQ(c.train_path, fs::path("/base/a/train.tsv"));
  EXPECT_EQ(c.vocab_path, fs::path("/abs/vocab.txt"));
  EXPECT_EQ(c.sweep.budgets, (std::vector<int>{0, 2, 3, 4}));
  EXPECT_EQ(c.sweep.policies, (std::vector<PolicyKind>{PolicyKind::MaxGrad, PolicyKind::Random}));
  ASSERT_EQ(c.sweep.source_sets.size(), 3u);
  EXPECT_EQ(c.sweep.source_sets[1].label(), "wiki");
  EXPECT_EQ(c.sweep.master_seed, 7u);
  EXPECT_FALSE(c.hyperparams.linear_decay);
  EXPECT_EQ(c.hyperparams.weight_decay, 0.01);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("colour = blue\n"), DataError);
  EXPECT_THROW(parse_config("budgets = 3..1\n"), DataError);
  EXPECT_THROW(parse_config("budgets = -1\n"), DataError);
  EXPECT_THROW(parse_config("epochs = many\n"), DataError);
  EXPECT_THROW(parse_config("policies = best\n"), DataError);
  EXPECT_THROW(parse_config("just a line\n"), DataError);
  EXPECT_THROW(parse_config("random_seeds = 0\n"), DataError);
  EXPECT_THROW(load_config("/nonexistent/experiment.conf"), DataError);
}

TEST(Config, HashCoversResultsOnly) {
  const auto base = parse_config("master_seed = 1\n");
  EXPECT_EQ(base.hash(), parse_config("master_seed = 1\noutput_dir = elsewhere\nthreads = 8\n").hash());
  EXPECT_NE(base.hash(), parse_config("master_seed = 2\n").hash());
  EXPECT_NE(base.hash(), parse_config("master_seed = 1\nbudgets = 0..5\n").hash());
  EXPECT_EQ(base.hash().size(), 16u);
}

TEST(Config, OutputDirectoryEnvironmentOverride) {
  const auto path = small_config("env_override");
  ::setenv(kOutputDirEnv, "/tmp/kbtypo_env_dir", 1);
  EXPECT_EQ(load_config(path).output_dir, fs::path("/tmp/kbtypo_env_dir"));
  ::unsetenv(kOutputDirEnv);
  EXPECT_EQ(load_config(path).output_dir, path.parent_path() / "out");
}

TEST(Experiment, WritesReproducibleReports) {
  auto c = load_config(small_config("e2e"));
  const auto first = run_experiment(c);
  const auto tsv1 = slurp(c.output_dir / "report.tsv");
  const auto jsonl1 = slurp(c.output_dir / "transcripts.jsonl");
  c.output_dir = c.output_dir.parent_path() / "out2";
  c.sweep.threads = 2;
  run_experiment(c);
  EXPECT_EQ(slurp(c.output_dir / "report.tsv"), tsv1);
  EXPECT_EQ(slurp(c.output_dir / "transcripts.jsonl"), jsonl1);

  const auto& r = first.report;
  EXPECT_EQ(r.cells.size(), 12u);
  for (auto p : {PolicyKind::MaxGrad, PolicyKind::MinGrad, PolicyKind::Random})
    EXPECT_EQ(r.find(p, "all", 0)->accuracy, r.clean_accuracy);
  EXPECT_EQ(r.meta.corpus_size, 40u);
  EXPECT_EQ(r.meta.corpus_name, "dev");
  EXPECT_EQ(r.meta.config_hash, c.hash());
  EXPECT_EQ(r.meta.vocab_hash, hex64(fixtures::bert_vocab()->hash()));
  EXPECT_NE(tsv1.find("# master_seed\t2020"), std::string::npos);
  EXPECT_TRUE(fs::exists(c.output_dir / "series" / "series_random_all.tsv"));
  // 1 + 1 + 2 runs over 40 examples.
  EXPECT_EQ(std::count(jsonl1.begin(), jsonl1.end(), '\n'), 160);
}

TEST(Experiment, UnreachableRemoteFailsBeforeAttacking) {
  auto c = load_config(small_config("unreachable", "victim = tcp:127.0.0.1:1\nvictim_timeout_ms = 500\n"));
  fs::remove_all(c.output_dir);
  EXPECT_THROW(run_experiment(c), RemoteError);
  EXPECT_FALSE(fs::exists(c.output_dir / "report.tsv"));
}

TEST(Experiment, TransferOntoItselfEqualsAttackedAccuracy) {
  const auto c = load_config(small_config("self_transfer"));
  const auto in = load_inputs(c);
  const auto victim = make_victim(c, in.vocab);
  const auto report = sweep(*victim, in.typos, in.dev.examples, c.sweep);
  const auto tr = transfer_report(report, in.dev.examples, *victim);
  EXPECT_EQ(tr.target_clean, report.clean_accuracy);
  ASSERT_EQ(tr.cells.size(), report.cells.size());
  for (const auto& cell : tr.cells) EXPECT_DOUBLE_EQ(cell.transfer_accuracy, cell.attacked_accuracy);
}

TEST(Cli, ExitCodes) {
  const auto conf = small_config("cli");
  const auto out = conf.parent_path() / "cli_output.txt";
  EXPECT_EQ(run_cli("", out), 1);
  EXPECT_EQ(run_cli("sweep", out), 1);
  EXPECT_EQ(run_cli("frobnicate", out), 1);
  EXPECT_EQ(run_cli("sweep --config /nonexistent.conf", out), 2);
  EXPECT_EQ(run_cli("report /nonexistent/report.json", out), 2);

  const auto bad_remote = conf.parent_path() / "remote.conf";
  std::ofstream(bad_remote) << slurp(conf) << "victim = stdio:exit 3\n";
  EXPECT_EQ(run_cli("sweep --config " + bad_remote.string(), out), 3);
  EXPECT_NE(slurp(out).find("remote victim error"), std::string::npos);
}

TEST(Cli, AttackAndReportSubcommands) {
  const auto conf = small_config("cli_attack");
  const auto out = conf.parent_path() / "attack_output.txt";
  ASSERT_EQ(run_cli("train --config " + conf.string(), out), 0) << slurp(out);
  const auto model = conf.parent_path() / "out" / "model.bin";
  ASSERT_TRUE(fs::exists(model));
  const auto with_model = conf.parent_path() / "with_model.conf";
  std::ofstream(with_model) << slurp(conf) << "model = " << model.string() << "\n";

  const int rc = run_cli("attack --config " + with_model.string() +
                             " --text \"a gorgeous , witty , seductive movie .\" --label 1 --budget 2",
                         out);
  EXPECT_EQ(rc, 0);
  const auto text = slurp(out);
  EXPECT_TRUE(text.find("original\ta gorgeous") != std::string::npos || text.find("nothing to attack") != std::string::npos)
      << text;

  ASSERT_EQ(run_cli("sweep --config " + with_model.string(), out), 0) << slurp(out);
  const auto dir = conf.parent_path() / "out";
  ASSERT_EQ(run_cli("report " + (dir / "report.json").string(), out), 0);
  EXPECT_EQ(slurp(out), slurp(dir / "report.tsv"));
}

TEST(Cli, ServeSpeaksTheProtocol) {
  const auto conf = small_config("cli_serve");
  const auto out = conf.parent_path() / "serve_output.txt";
  ASSERT_EQ(run_cli("train --config " + conf.string(), out), 0) << slurp(out);
  const auto with_model = conf.parent_path() / "serve.conf";
  std::ofstream(with_model) << slurp(conf) << "model = " << (conf.parent_path() / "out" / "model.bin").string() << "\n";
  RemoteVictim remote(VictimEndpoint::parse(std::string("stdio:") + KBTYPO_CLI + " serve --config " + with_model.string()));
  EXPECT_EQ(remote.capabilities().tokenizer_id, "bert-base-uncased");
  const auto g = remote.grad_norms("robustness", 1);
  EXPECT_EQ(g.tokens, (std::vector<std::string>{"robust", "##ness"}));
  const BuiltinVictim local(fixtures::bert_vocab(), BuiltinModel::load((conf.parent_path() / "out" / "model.bin").string()));
  EXPECT_EQ(remote.predict("a fine film").probs, local.predict("a fine film").probs);
}
