#pragma once

// Flat "key = value" run configuration with dotted prefixes, loadable from a
// file and overridable from the command line. Unknown keys are rejected.
// The fully resolved configuration (defaults included) is echoed to disk
// before a run starts, so every artifact can be traced to its settings.

#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ivat/csv.hpp"
#include "ivat/data.hpp"
#include "ivat/error.hpp"
#include "ivat/model.hpp"
#include "ivat/training.hpp"

namespace ivat {

inline std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct RunConfig {
  std::uint64_t seed = 7;
  std::string setting = "zero_shot";
  std::string out_dir;
  std::string data_train, data_dev, data_test, data_eval;
  std::string checkpoint;
  std::size_t vocab_cap = 2048;
  ModelConfig model;
  TrainConfig train;
  AdvConfig adv;
  std::size_t synth_n_mwes = 32;
  std::size_t synth_examples_per_mwe = 12;
  std::vector<std::string> compare_methods_list{"standard", "smart"};
  std::vector<std::uint64_t> compare_seeds{1, 2, 3, 4, 5};
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!trim(cur).empty()) out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    std::uint64_t v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    raise(ErrorKind::config, "config: '" + key + "' expects an unsigned integer, found '" + value + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    raise(ErrorKind::config, "config: '" + key + "' expects a number, found '" + value + "'");
  }
}

}  // namespace detail

// Applies one key. Raises on unknown keys and malformed values.
inline void apply_config_entry(RunConfig& rc, const std::string& key, const std::string& value) {
  using detail::parse_double;
  using detail::parse_u64;
  if (key == "seed") rc.seed = parse_u64(key, value);
  else if (key == "setting") {
    if (value != "zero_shot" && value != "one_shot")
      raise(ErrorKind::config, "config: setting must be zero_shot or one_shot, found '" + value + "'");
    rc.setting = value;
  } else if (key == "out.dir") rc.out_dir = value;
  else if (key == "data.train") rc.data_train = value;
  else if (key == "data.dev") rc.data_dev = value;
  else if (key == "data.test") rc.data_test = value;
  else if (key == "data.eval") rc.data_eval = value;
  else if (key == "checkpoint") rc.checkpoint = value;
  else if (key == "model.vocab_cap") rc.vocab_cap = parse_u64(key, value);
  else if (key == "model.d_model") rc.model.d_model = parse_u64(key, value);
  else if (key == "model.n_layers") rc.model.n_layers = parse_u64(key, value);
  else if (key == "model.n_heads") rc.model.n_heads = parse_u64(key, value);
  else if (key == "model.d_ff") rc.model.d_ff = parse_u64(key, value);
  else if (key == "model.max_len") rc.model.max_len = parse_u64(key, value);
  else if (key == "model.dropout") rc.model.dropout_rate = parse_double(key, value);
  else if (key == "model.init_std") rc.model.init_std = parse_double(key, value);
  else if (key == "train.method") rc.train.method = parse_method(value);
  else if (key == "train.learning_rate") rc.train.learning_rate = parse_double(key, value);
  else if (key == "train.batch_size") rc.train.batch_size = parse_u64(key, value);
  else if (key == "train.max_epochs") rc.train.max_epochs = parse_u64(key, value);
  else if (key == "train.warmup_ratio") rc.train.warmup_ratio = parse_double(key, value);
  else if (key == "train.grad_clip_norm") rc.train.grad_clip_norm = parse_double(key, value);
  else if (key == "train.eval_batch_size") rc.train.eval_batch_size = parse_u64(key, value);
  else if (key == "adv.epsilon") rc.adv.epsilon = parse_double(key, value);
  else if (key == "adv.eta") rc.adv.eta = parse_double(key, value);
  else if (key == "adv.sigma") rc.adv.sigma = parse_double(key, value);
  else if (key == "adv.k_steps") rc.adv.k_steps = parse_u64(key, value);
  else if (key == "adv.alpha") rc.adv.alpha = parse_double(key, value);
  else if (key == "synth.n_mwes") rc.synth_n_mwes = parse_u64(key, value);
  else if (key == "synth.examples_per_mwe") rc.synth_examples_per_mwe = parse_u64(key, value);
  else if (key == "compare.methods") {
    rc.compare_methods_list = detail::split_list(value);
    if (rc.compare_methods_list.empty()) raise(ErrorKind::config, "config: compare.methods is empty");
  } else if (key == "compare.seeds") {
    rc.compare_seeds.clear();
    for (const auto& s : detail::split_list(value)) rc.compare_seeds.push_back(parse_u64(key, s));
    if (rc.compare_seeds.empty()) raise(ErrorKind::config, "config: compare.seeds is empty");
  } else {
    raise(ErrorKind::config, "config: unknown key '" + key + "'");
  }
}

// File format: one "key = value" per line, '#' starts a comment.
inline void load_config_file(RunConfig& rc, const std::string& path) {
  std::string text = read_text_file(path);
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      raise(ErrorKind::config, path + ": line " + std::to_string(line_no) + ": expected 'key = value'");
    apply_config_entry(rc, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    if (pos > text.size()) break;
  }
}

// Short command line flags for the common knobs; any flag spelled with a dot
// is taken as a config key directly.
inline const std::map<std::string, std::string>& flag_aliases() {
  static const std::map<std::string, std::string> aliases = {
      {"seed", "seed"},
      {"setting", "setting"},
      {"out", "out.dir"},
      {"train", "data.train"},
      {"dev", "data.dev"},
      {"test", "data.test"},
      {"data", "data.eval"},
      {"checkpoint", "checkpoint"},
      {"method", "train.method"},
      {"lr", "train.learning_rate"},
      {"batch-size", "train.batch_size"},
      {"epochs", "train.max_epochs"},
      {"warmup", "train.warmup_ratio"},
      {"clip", "train.grad_clip_norm"},
      {"epsilon", "adv.epsilon"},
      {"eta", "adv.eta"},
      {"sigma", "adv.sigma"},
      {"k-steps", "adv.k_steps"},
      {"alpha", "adv.alpha"},
      {"n-mwes", "synth.n_mwes"},
      {"examples-per-mwe", "synth.examples_per_mwe"},
      {"methods", "compare.methods"},
      {"seeds", "compare.seeds"},
      {"vocab-cap", "model.vocab_cap"},
      {"d-model", "model.d_model"},
      {"n-layers", "model.n_layers"},
      {"n-heads", "model.n_heads"},
      {"d-ff", "model.d_ff"},
      {"max-len", "model.max_len"},
      {"dropout", "model.dropout"},
  };
  return aliases;
}

inline std::string resolve_flag(const std::string& flag) {
  if (flag.find('.') != std::string::npos) return flag;
  auto it = flag_aliases().find(flag);
  if (it == flag_aliases().end()) raise(ErrorKind::config, "unknown option '--" + flag + "'");
  return it->second;
}

inline std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

// Every key with its effective value, defaults included, in a fixed order.
inline std::string resolved_config_text(const RunConfig& rc) {
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("seed", std::to_string(rc.seed));
  kv.emplace_back("setting", rc.setting);
  kv.emplace_back("out.dir", rc.out_dir);
  kv.emplace_back("data.train", rc.data_train);
  kv.emplace_back("data.dev", rc.data_dev);
  kv.emplace_back("data.test", rc.data_test);
  kv.emplace_back("data.eval", rc.data_eval);
  kv.emplace_back("checkpoint", rc.checkpoint);
  kv.emplace_back("model.vocab_cap", std::to_string(rc.vocab_cap));
  kv.emplace_back("model.d_model", std::to_string(rc.model.d_model));
  kv.emplace_back("model.n_layers", std::to_string(rc.model.n_layers));
  kv.emplace_back("model.n_heads", std::to_string(rc.model.n_heads));
  kv.emplace_back("model.d_ff", std::to_string(rc.model.d_ff));
  kv.emplace_back("model.max_len", std::to_string(rc.model.max_len));
  kv.emplace_back("model.dropout", format_g17(rc.model.dropout_rate));
  kv.emplace_back("model.init_std", format_g17(rc.model.init_std));
  kv.emplace_back("train.method", method_name(rc.train.method));
  kv.emplace_back("train.learning_rate", format_g17(rc.train.learning_rate));
  kv.emplace_back("train.batch_size", std::to_string(rc.train.batch_size));
  kv.emplace_back("train.max_epochs", std::to_string(rc.train.max_epochs));
  kv.emplace_back("train.warmup_ratio", format_g17(rc.train.warmup_ratio));
  kv.emplace_back("train.grad_clip_norm", format_g17(rc.train.grad_clip_norm));
  kv.emplace_back("train.eval_batch_size", std::to_string(rc.train.eval_batch_size));
  kv.emplace_back("adv.epsilon", format_g17(rc.adv.epsilon));
  kv.emplace_back("adv.eta", format_g17(rc.adv.eta));
  kv.emplace_back("adv.sigma", format_g17(rc.adv.sigma));
  kv.emplace_back("adv.k_steps", std::to_string(rc.adv.k_steps));
  kv.emplace_back("adv.alpha", format_g17(rc.adv.alpha));
  kv.emplace_back("synth.n_mwes", std::to_string(rc.synth_n_mwes));
  kv.emplace_back("synth.examples_per_mwe", std::to_string(rc.synth_examples_per_mwe));
  kv.emplace_back("compare.methods", join_list(rc.compare_methods_list));
  {
    std::vector<std::string> seeds;
    for (auto s : rc.compare_seeds) seeds.push_back(std::to_string(s));
    kv.emplace_back("compare.seeds", join_list(seeds));
  }
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

}  // namespace ivat
