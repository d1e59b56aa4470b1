#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& tag) {
  static int counter = 0;
  fs::path d = fs::temp_directory_path() /
               ("ivat_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + "_" + tag);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

CliResult run_cli(const std::string& args, const fs::path& scratch) {
  fs::path so = scratch / "_stdout.txt";
  fs::path se = scratch / "_stderr.txt";
  std::string cmd = std::string("'") + IVAT_CLI_PATH + "' " + args + " >'" + so.string() + "' 2>'" +
                    se.string() + "'";
  int status = std::system(cmd.c_str());
  CliResult r;
  if (WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
  r.out = slurp(so);
  r.err = slurp(se);
  return r;
}

// Small corpus and model so each subprocess finishes in well under a second.
const char* kSynthArgs = "--seed 7 --n-mwes 4 --examples-per-mwe 4";
const char* kTinyModel = "--d-model 16 --n-layers 1 --n-heads 2 --d-ff 32 --max-len 48";

fs::path make_dataset(const std::string& tag) {
  fs::path d = fresh_dir(tag);
  CliResult r = run_cli("synth --out '" + d.string() + "' " + kSynthArgs, d);
  EXPECT_EQ(r.exit_code, 0) << r.err;
  return d;
}

std::string train_args(const fs::path& data, const fs::path& out, const std::string& extra) {
  return "train --train '" + (data / "train.csv").string() + "' --dev '" + (data / "dev.csv").string() +
         "' --out '" + out.string() + "' " + kTinyModel + " --epochs 2 --batch-size 8 " + extra;
}

}  // namespace

TEST(Cli, HelpAndBadInvocations) {
  fs::path d = fresh_dir("help");
  CliResult help = run_cli("help", d);
  EXPECT_EQ(help.exit_code, 0);
  EXPECT_NE(help.out.find("usage:"), std::string::npos);

  EXPECT_EQ(run_cli("", d).exit_code, 1);
  CliResult bogus = run_cli("frobnicate", d);
  EXPECT_EQ(bogus.exit_code, 1);
  EXPECT_FALSE(bogus.err.empty());
  EXPECT_EQ(run_cli("synth --no-such-flag 3", d).exit_code, 1);
}

TEST(Cli, SynthWritesDeterministicArtifacts) {
  fs::path a = fresh_dir("synth_a");
  fs::path b = fresh_dir("synth_b");
  fs::path c = fresh_dir("synth_c");
  ASSERT_EQ(run_cli("synth --out '" + a.string() + "' " + kSynthArgs, a).exit_code, 0);
  ASSERT_EQ(run_cli("synth --out '" + b.string() + "' " + kSynthArgs, b).exit_code, 0);
  ASSERT_EQ(run_cli("synth --out '" + c.string() + "' --seed 8 --n-mwes 4 --examples-per-mwe 4", c)
                .exit_code,
            0);
  for (const char* f : {"train.csv", "dev.csv", "test.csv", "manifest.txt"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f << " not reproducible";
  }
  EXPECT_TRUE(fs::exists(a / "resolved.cfg"));
  EXPECT_TRUE(fs::exists(a / "run.log"));
  EXPECT_NE(slurp(a / "train.csv"), slurp(c / "train.csv")) << "seed had no effect";
}

TEST(Cli, SynthRejectsUnsatisfiableConfig) {
  fs::path d = fresh_dir("synth_bad");
  CliResult r = run_cli("synth --out '" + d.string() + "' --n-mwes 3", d);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("n_mwes"), std::string::npos) << r.err;
}

TEST(Cli, TrainWritesModelHistoryAndMetrics) {
  fs::path data = make_dataset("train_data");
  fs::path run = fresh_dir("train_run");
  CliResult r = run_cli(train_args(data, run, "--method smart"), run);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  for (const char* f : {"model.ckpt", "history.jsonl", "metrics_dev.json", "resolved.cfg", "run.log"})
    EXPECT_TRUE(fs::exists(run / f)) << f;

  std::string resolved = slurp(run / "resolved.cfg");
  EXPECT_NE(resolved.find("train.method = smart"), std::string::npos);
  EXPECT_NE(resolved.find("train.batch_size = 8"), std::string::npos);
  EXPECT_NE(resolved.find("adv.epsilon = 1"), std::string::npos);  // default echoed
  EXPECT_NE(resolved.find("train.warmup_ratio = 0.1"), std::string::npos);

  std::istringstream hist(slurp(run / "history.jsonl"));
  std::string line;
  std::size_t steps = 0;
  while (std::getline(hist, line)) {
    nlohmann::json j = nlohmann::json::parse(line);
    if (j["type"] != "step") continue;
    ++steps;
    EXPECT_GE(j["adv_term"].get<double>(), 0.0);
    EXPECT_LE(j["delta_max_abs"].get<double>(), 1e-5);
    EXPECT_EQ(j["delta_pad_max_abs"].get<double>(), 0.0);
  }
  EXPECT_GT(steps, 0u);

  nlohmann::json metrics = nlohmann::json::parse(slurp(run / "metrics_dev.json"));
  double f1 = metrics["macro_f1"].get<double>();
  EXPECT_GE(f1, 0.0);
  EXPECT_LE(f1, 1.0);
}

TEST(Cli, TrainingIsReproducibleAcrossProcesses) {
  fs::path data = make_dataset("repro_data");
  fs::path a = fresh_dir("repro_a");
  fs::path b = fresh_dir("repro_b");
  ASSERT_EQ(run_cli(train_args(data, a, "--method smart"), a).exit_code, 0);
  ASSERT_EQ(run_cli(train_args(data, b, "--method smart"), b).exit_code, 0);
  EXPECT_EQ(slurp(a / "history.jsonl"), slurp(b / "history.jsonl"));
  EXPECT_EQ(slurp(a / "model.ckpt"), slurp(b / "model.ckpt"));
  EXPECT_EQ(slurp(a / "metrics_dev.json"), slurp(b / "metrics_dev.json"));
}

TEST(Cli, SmartWithTermsDisabledMatchesStandardHistory) {
  fs::path data = make_dataset("reduction_data");
  fs::path smart = fresh_dir("reduction_smart");
  fs::path standard = fresh_dir("reduction_standard");
  ASSERT_EQ(
      run_cli(train_args(data, smart, "--method smart --alpha 0 --sigma 0 --k-steps 0"), smart).exit_code,
      0);
  ASSERT_EQ(run_cli(train_args(data, standard, "--method standard"), standard).exit_code, 0);
  EXPECT_EQ(slurp(smart / "history.jsonl"), slurp(standard / "history.jsonl"));
  EXPECT_EQ(slurp(smart / "model.ckpt"), slurp(standard / "model.ckpt"));
}

TEST(Cli, TrainMissingDataFileNamesThePath) {
  fs::path d = fresh_dir("missing");
  CliResult r = run_cli("train --train '" + (d / "absent.csv").string() + "' --out '" +
                            (d / "run").string() + "'",
                        d);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("absent.csv"), std::string::npos) << r.err;
}

TEST(Cli, EvalReproducesTrainingDevMetrics) {
  fs::path data = make_dataset("eval_data");
  fs::path run = fresh_dir("eval_run");
  ASSERT_EQ(run_cli(train_args(data, run, "--method standard"), run).exit_code, 0);

  fs::path e1 = fresh_dir("eval_one");
  fs::path e2 = fresh_dir("eval_two");
  std::string eval_args = "eval --checkpoint '" + (run / "model.ckpt").string() + "' --data '" +
                          (data / "dev.csv").string() + "'";
  ASSERT_EQ(run_cli(eval_args + " --out '" + e1.string() + "'", e1).exit_code, 0);
  ASSERT_EQ(run_cli(eval_args + " --out '" + e2.string() + "'", e2).exit_code, 0);

  nlohmann::json from_train = nlohmann::json::parse(slurp(run / "metrics_dev.json"));
  nlohmann::json from_eval = nlohmann::json::parse(slurp(e1 / "metrics.json"));
  EXPECT_EQ(from_eval["macro_f1"].get<double>(), from_train["macro_f1"].get<double>())
      << "checkpoint round trip changed the dev score";
  EXPECT_EQ(slurp(e1 / "metrics.json"), slurp(e2 / "metrics.json"));
  EXPECT_TRUE(fs::exists(e1 / "metrics.txt"));
}

TEST(Cli, GradcheckPassesAndInjectedFaultIsCaught) {
  fs::path d = fresh_dir("gradcheck");
  CliResult good = run_cli("gradcheck", d);
  EXPECT_EQ(good.exit_code, 0) << good.out;
  EXPECT_NE(good.out.find("PASS"), std::string::npos);
  EXPECT_EQ(good.out.find("FAIL"), std::string::npos) << good.out;

  CliResult bad = run_cli("gradcheck --inject-fault", d);
  EXPECT_EQ(bad.exit_code, 2);
  EXPECT_NE(bad.out.find("injected_fault"), std::string::npos) << bad.out;
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
}

TEST(Cli, CompareTabulatesMethods) {
  fs::path data = make_dataset("cmp_data");
  fs::path out = fresh_dir("cmp_out");
  std::string args = "compare --train '" + (data / "train.csv").string() + "' --dev '" +
                     (data / "dev.csv").string() + "' --test '" + (data / "test.csv").string() +
                     "' --out '" + out.string() + "' " + kTinyModel +
                     " --epochs 1 --batch-size 8 --methods standard,smart --seeds 1,2";
  CliResult r = run_cli(args, out);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  nlohmann::json j = nlohmann::json::parse(slurp(out / "comparison.json"));
  EXPECT_EQ(j["methods"].size(), 2u);
  EXPECT_TRUE(j.contains("verdicts"));
  std::string csv = slurp(out / "comparison.csv");
  EXPECT_NE(csv.find("method"), std::string::npos);
  std::string text = slurp(out / "comparison.txt");
  EXPECT_NE(text.find("standard"), std::string::npos);
  EXPECT_NE(text.find("smart"), std::string::npos);
  EXPECT_NE(r.out.find("standard"), std::string::npos);  // table echoed to stdout
}

TEST(Cli, CompareRejectsUnknownMethod) {
  fs::path data = make_dataset("cmp_bad_data");
  fs::path out = fresh_dir("cmp_bad_out");
  std::string args = "compare --train '" + (data / "train.csv").string() + "' --dev '" +
                     (data / "dev.csv").string() + "' --out '" + out.string() +
                     "' --methods standard,bogus --seeds 1";
  CliResult r = run_cli(args, out);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("bogus"), std::string::npos) << r.err;
}

TEST(Cli, DivergentRunExitsWithNumericCode) {
  fs::path data = make_dataset("blowup_data");
  fs::path run = fresh_dir("blowup_run");
  // One step per epoch here; the oversized step corrupts the parameters and
  // the next epoch's forward pass hits the resulting overflow.
  CliResult r = run_cli(train_args(data, run, "--method standard --lr 1e12 --epochs 6"), run);
  EXPECT_EQ(r.exit_code, 2) << r.err;
  EXPECT_TRUE(fs::exists(run / "history.jsonl"));
  EXPECT_FALSE(fs::exists(run / "model.ckpt"));
  EXPECT_NE(slurp(run / "history.jsonl").find("\"type\":\"abort\""), std::string::npos);
}
