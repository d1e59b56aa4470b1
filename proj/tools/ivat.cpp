// Command line front end: synthesize data, train, evaluate, compare methods,
// and verify gradients. Exit codes: 0 success, 1 validation/config error,
// 2 numeric failure, 3 internal error.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ivat/checkpoint.hpp"
#include "ivat/compare.hpp"
#include "ivat/config.hpp"
#include "ivat/csv.hpp"
#include "ivat/data.hpp"
#include "ivat/eval.hpp"
#include "ivat/gradcheck_suite.hpp"
#include "ivat/model.hpp"
#include "ivat/training.hpp"

#include "json.hpp"

namespace fs = std::filesystem;
using namespace ivat;

namespace {

constexpr const char* kUsage = R"(usage: ivat <command> [options]

commands:
  synth      write a synthetic dataset (train/dev/test CSV plus manifest)
  train      fine-tune a classifier on a CSV dataset
  eval       score a checkpoint on a dataset split
  compare    train several methods across seeds and tabulate dev/test F1
  gradcheck  run the finite-difference gradient suite

common options:
  --config FILE          flat key = value configuration file
  --<key> VALUE          any config key (dotted form), e.g. --adv.epsilon 1e-5
  aliases: --seed --setting --out --train --dev --test --data --checkpoint
           --method --lr --batch-size --epochs --warmup --clip
           --epsilon --eta --sigma --k-steps --alpha
           --n-mwes --examples-per-mwe --methods --seeds
           --vocab-cap --d-model --n-layers --n-heads --d-ff --max-len --dropout

examples:
  ivat synth --out data/ --seed 7 --n-mwes 32 --examples-per-mwe 12 --setting zero_shot
  ivat train --train data/train.csv --dev data/dev.csv --out run/ --method smart
  ivat eval --checkpoint run/model.ckpt --data data/test.csv --out eval/
  ivat compare --train data/train.csv --dev data/dev.csv --test data/test.csv \
               --out cmp/ --methods standard,smart --seeds 1,2,3,4,5
  ivat gradcheck
)";

struct ParsedArgs {
  std::vector<std::pair<std::string, std::string>> entries;
  std::string config_file;
  bool inject_fault = false;
};

ParsedArgs parse_args(int argc, char** argv, int start) {
  ParsedArgs out;
  for (int i = start; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg.rfind("--", 0) != 0) raise(ErrorKind::config, "unexpected argument '" + arg + "'");
    std::string name = arg.substr(2);
    if (name == "inject-fault") {
      out.inject_fault = true;
      continue;
    }
    if (i + 1 >= argc) raise(ErrorKind::config, "option '--" + name + "' needs a value");
    std::string value = argv[++i];
    if (name == "config") {
      out.config_file = value;
    } else {
      out.entries.emplace_back(resolve_flag(name), value);
    }
  }
  return out;
}

RunConfig build_run_config(const ParsedArgs& args) {
  RunConfig rc;
  if (!args.config_file.empty()) load_config_file(rc, args.config_file);
  for (const auto& [key, value] : args.entries) apply_config_entry(rc, key, value);
  return rc;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) raise(ErrorKind::config, what + " is required");
  if (!fs::exists(path)) raise(ErrorKind::config, what + " '" + path + "' does not exist");
}

std::string timestamp_now() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[64];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Deterministic artifacts never include time; it goes to run.log only.
void start_run_log(const std::string& out_dir, int argc, char** argv) {
  std::string log = "started " + timestamp_now() + "\ncommand:";
  for (int i = 0; i < argc; ++i) log += std::string(" ") + argv[i];
  log += "\n";
  write_text_file(out_dir + "/run.log", log);
}

void prepare_out_dir(const RunConfig& rc, int argc, char** argv) {
  if (rc.out_dir.empty()) raise(ErrorKind::config, "--out directory is required");
  std::error_code ec;
  fs::create_directories(rc.out_dir, ec);
  if (ec) raise(ErrorKind::io, "cannot create output directory '" + rc.out_dir + "': " + ec.message());
  write_text_file(rc.out_dir + "/resolved.cfg", resolved_config_text(rc));
  start_run_log(rc.out_dir, argc, argv);
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

int cmd_synth(const RunConfig& rc, int argc, char** argv) {
  SynthConfig sc;
  sc.seed = rc.seed;
  sc.n_mwes = rc.synth_n_mwes;
  sc.examples_per_mwe = rc.synth_examples_per_mwe;
  sc.setting = rc.setting;
  SyntheticDataset data = generate_synthetic(sc);

  ValidationReport report;
  if (sc.setting == "zero_shot") {
    report = validate_zero_shot(data.train, {&data.dev, &data.test});
  } else {
    report = validate_one_shot(data.train, data.dev);
    ValidationReport second = validate_one_shot(data.train, data.test);
    for (const auto& issue : second.issues) report.fail(issue);
  }
  if (!report.pass) {
    for (const auto& issue : report.issues) std::cerr << "validation: " << issue << "\n";
    raise(ErrorKind::contract, "generated dataset violates its own data conditions");
  }

  prepare_out_dir(rc, argc, argv);
  save_examples_csv(rc.out_dir + "/train.csv", data.train.examples);
  save_examples_csv(rc.out_dir + "/dev.csv", data.dev.examples);
  save_examples_csv(rc.out_dir + "/test.csv", data.test.examples);
  write_text_file(rc.out_dir + "/manifest.txt", synth_manifest(data));
  std::printf("wrote %s: %zu train / %zu dev / %zu test examples (%s)\n", rc.out_dir.c_str(),
              data.train.examples.size(), data.dev.examples.size(), data.test.examples.size(),
              sc.setting.c_str());
  return 0;
}

int cmd_train(RunConfig rc, int argc, char** argv) {
  require_file(rc.data_train, "--train file");
  if (!rc.data_dev.empty()) require_file(rc.data_dev, "--dev file");
  rc.train.validate();
  rc.adv.validate();

  std::vector<std::string> warnings;
  DatasetSplit train_split{"train", load_examples_csv(rc.data_train, &warnings)};
  DatasetSplit dev_split{"dev", {}};
  if (!rc.data_dev.empty()) dev_split.examples = load_examples_csv(rc.data_dev, &warnings);
  print_warnings(warnings);

  Vocab vocab = build_vocab(train_split.examples, rc.vocab_cap);
  ModelConfig mc = rc.model;
  mc.vocab_size = vocab.size();
  mc.init_seed = derive_seed(rc.seed, "init");
  mc.validate();

  TrainConfig tc = rc.train;
  tc.seed = rc.seed;

  prepare_out_dir(rc, argc, argv);
  EncoderModel model = init_model(mc);
  TrainResult result = train_run(model, train_split, dev_split.examples.empty() ? nullptr : &dev_split,
                                 vocab, tc, rc.adv);
  write_text_file(rc.out_dir + "/history.jsonl", result.history.to_jsonl());
  if (result.aborted) {
    std::cerr << "training aborted: " << result.abort_reason << "\n";
    std::printf("wrote %s/history.jsonl (aborted run)\n", rc.out_dir.c_str());
    return 2;
  }
  save_checkpoint(model, vocab, rc.out_dir + "/model.ckpt");
  if (!dev_split.examples.empty()) {
    MetricsReport report = evaluate_split(model, dev_split, vocab, tc.eval_batch_size);
    write_text_file(rc.out_dir + "/metrics_dev.json", report_to_json(report).dump(2) + "\n");
    std::printf("best dev macro-F1 %.4f (epoch %zu)\n", result.best_dev_macro_f1, result.best_epoch);
  }
  std::printf("wrote %s/model.ckpt and %s/history.jsonl (%zu steps)\n", rc.out_dir.c_str(),
              rc.out_dir.c_str(), result.history.steps.size());
  return 0;
}

int cmd_eval(const RunConfig& rc, int argc, char** argv) {
  require_file(rc.checkpoint, "--checkpoint file");
  require_file(rc.data_eval, "--data file");
  LoadedCheckpoint ckpt = load_checkpoint(rc.checkpoint);
  std::vector<std::string> warnings;
  DatasetSplit split{"eval", load_examples_csv(rc.data_eval, &warnings)};
  print_warnings(warnings);
  MetricsReport report = evaluate_split(ckpt.model, split, ckpt.vocab, rc.train.eval_batch_size);

  prepare_out_dir(rc, argc, argv);
  write_text_file(rc.out_dir + "/metrics.json", report_to_json(report).dump(2) + "\n");
  std::string text;
  char buf[160];
  std::snprintf(buf, sizeof buf, "examples %lld  accuracy %.4f  macro-F1 %.4f\n",
                report.overall.n, report.overall.accuracy, report.overall.macro_f1);
  text += buf;
  for (int c = 0; c < 2; ++c) {
    std::snprintf(buf, sizeof buf, "class %d: precision %.4f recall %.4f f1 %.4f support %lld\n", c,
                  report.overall.per_class[c].precision, report.overall.per_class[c].recall,
                  report.overall.per_class[c].f1, report.overall.per_class[c].support);
    text += buf;
  }
  for (const auto& [lang, block] : report.per_language) {
    std::snprintf(buf, sizeof buf, "%s: n %lld accuracy %.4f macro-F1 %.4f\n", lang.c_str(), block.n,
                  block.accuracy, block.macro_f1);
    text += buf;
  }
  write_text_file(rc.out_dir + "/metrics.txt", text);
  std::fputs(text.c_str(), stdout);
  return 0;
}

int cmd_compare(RunConfig rc, int argc, char** argv) {
  require_file(rc.data_train, "--train file");
  require_file(rc.data_dev, "--dev file");
  if (!rc.data_test.empty()) require_file(rc.data_test, "--test file");
  for (const auto& m : rc.compare_methods_list) parse_method(m);
  rc.train.validate();
  rc.adv.validate();

  std::vector<std::string> warnings;
  DatasetSplit train_split{"train", load_examples_csv(rc.data_train, &warnings)};
  DatasetSplit dev_split{"dev", load_examples_csv(rc.data_dev, &warnings)};
  DatasetSplit test_split{"test", {}};
  if (!rc.data_test.empty()) test_split.examples = load_examples_csv(rc.data_test, &warnings);
  print_warnings(warnings);

  Vocab vocab = build_vocab(train_split.examples, rc.vocab_cap);
  ModelConfig mc = rc.model;
  mc.vocab_size = vocab.size();
  mc.validate();

  prepare_out_dir(rc, argc, argv);
  ComparisonResult result =
      compare_methods(train_split, dev_split, test_split.examples.empty() ? nullptr : &test_split,
                      vocab, mc, rc.train, rc.adv, rc.compare_methods_list, rc.compare_seeds,
                      rc.setting);
  write_text_file(rc.out_dir + "/comparison.json", comparison_to_json(result).dump(2) + "\n");
  write_text_file(rc.out_dir + "/comparison.csv", comparison_to_csv(result));
  std::string text = comparison_to_text(result);
  write_text_file(rc.out_dir + "/comparison.txt", text);
  std::fputs(text.c_str(), stdout);
  std::size_t total_ok = 0;
  for (const auto& row : result.rows) total_ok += row.n_ok;
  if (total_ok == 0) raise(ErrorKind::numeric, "every training run failed");
  return 0;
}

int cmd_gradcheck(bool inject_fault) {
  auto checks = run_gradcheck_suite(inject_fault);
  bool all_pass = true;
  for (const auto& c : checks) {
    std::printf("%-28s max_rel_err %.3e  tol %.1e  %s%s\n", c.report.name.c_str(),
                c.report.max_rel_err, c.report.tolerance, c.report.pass ? "PASS" : "FAIL",
                c.expect_fail ? " (fault injected on purpose)" : "");
    all_pass = all_pass && c.report.pass;
  }
  return all_pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fputs(kUsage, stderr);
    return 1;
  }
  std::string command = argv[1];
  if (command == "help" || command == "--help" || command == "-h") {
    std::fputs(kUsage, stdout);
    return 0;
  }
  try {
    ParsedArgs args = parse_args(argc, argv, 2);
    if (command == "gradcheck") return cmd_gradcheck(args.inject_fault);
    RunConfig rc = build_run_config(args);
    if (command == "synth") return cmd_synth(rc, argc, argv);
    if (command == "train") return cmd_train(std::move(rc), argc, argv);
    if (command == "eval") return cmd_eval(rc, argc, argv);
    if (command == "compare") return cmd_compare(std::move(rc), argc, argv);
    raise(ErrorKind::config, "unknown command '" + command + "'");
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::numeric ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
