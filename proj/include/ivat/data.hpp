#pragma once

// Dataset handling for binary idiomaticity classification. Each example is a
// sentence (with optional neighbouring sentences) containing one multiword
// expression; label 0 means idiomatic usage, 1 means literal/other usage.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ivat/csv.hpp"
#include "ivat/error.hpp"
#include "ivat/rng.hpp"

namespace ivat {

struct Example {
  std::string id;
  std::string language;  // EN, PT or GL
  std::string mwe;
  std::string previous;
  std::string target;
  std::string next;
  int label = 0;  // 0 = idiomatic, 1 = non-idiomatic
};

struct DatasetSplit {
  std::string name;
  std::vector<Example> examples;
};

inline std::string ascii_lower(std::string s) {
  for (char& c : s)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return s;
}

inline std::string ascii_upper(std::string s) {
  for (char& c : s)
    if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  return s;
}

inline std::vector<std::string> whitespace_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!cur.empty()) {
        words.push_back(ascii_lower(cur));
        cur.clear();
      }
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) words.push_back(ascii_lower(cur));
  return words;
}

// ---------------------------------------------------------------------------
// CSV dataset files
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& dataset_header() {
  static const std::vector<std::string> h = {"id", "language", "mwe", "previous", "target", "next", "label"};
  return h;
}

// Loads one split. Structural problems (wrong column set, bad label, unknown
// language, empty mwe/target) raise with the offending line number. Rows
// whose mwe does not occur in the target sentence are kept but reported as
// warnings.
inline std::vector<Example> load_examples_csv(const std::string& path,
                                              std::vector<std::string>* warnings = nullptr) {
  std::string text = read_text_file(path);
  if (text.size() >= 3 && static_cast<unsigned char>(text[0]) == 0xEF &&
      static_cast<unsigned char>(text[1]) == 0xBB && static_cast<unsigned char>(text[2]) == 0xBF)
    text.erase(0, 3);
  auto rows = csv_parse(text, path);
  if (rows.empty()) raise(ErrorKind::schema, path + ": empty file");
  if (rows[0].fields != dataset_header())
    raise(ErrorKind::schema, path + ": header must be exactly 'id,language,mwe,previous,target,next,label'");
  std::vector<Example> out;
  out.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    std::string where = path + ": line " + std::to_string(row.line);
    if (row.fields.size() == 1 && row.fields[0].empty()) continue;  // trailing blank line
    if (row.fields.size() != dataset_header().size())
      raise(ErrorKind::schema, where + ": expected 7 fields, found " + std::to_string(row.fields.size()));
    Example e;
    e.id = row.fields[0];
    e.language = ascii_upper(row.fields[1]);
    e.mwe = row.fields[2];
    e.previous = row.fields[3];
    e.target = row.fields[4];
    e.next = row.fields[5];
    const std::string& label = row.fields[6];
    if (label != "0" && label != "1")
      raise(ErrorKind::value, where + ": label must be 0 or 1, found '" + label + "'");
    e.label = label == "1" ? 1 : 0;
    if (e.language != "EN" && e.language != "PT" && e.language != "GL")
      raise(ErrorKind::value, where + ": unknown language '" + row.fields[1] + "'");
    if (e.mwe.empty()) raise(ErrorKind::value, where + ": empty mwe");
    if (e.target.empty()) raise(ErrorKind::value, where + ": empty target sentence");
    if (ascii_lower(e.target).find(ascii_lower(e.mwe)) == std::string::npos && warnings)
      warnings->push_back(where + ": mwe '" + e.mwe + "' not found in target sentence");
    out.push_back(std::move(e));
  }
  return out;
}

inline std::string examples_to_csv(const std::vector<Example>& examples) {
  std::string out = csv_join(dataset_header());
  for (const auto& e : examples)
    out += csv_join({e.id, e.language, e.mwe, e.previous, e.target, e.next, std::to_string(e.label)});
  return out;
}

inline void save_examples_csv(const std::string& path, const std::vector<Example>& examples) {
  write_text_file(path, examples_to_csv(examples));
}

// ---------------------------------------------------------------------------
// Vocabulary and tokenization
// ---------------------------------------------------------------------------

struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;

  std::vector<std::string> id_to_token{"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  std::unordered_map<std::string, int> token_to_id{
      {"[PAD]", kPad}, {"[UNK]", kUnk}, {"[CLS]", kCls}, {"[SEP]", kSep}};

  std::size_t size() const { return id_to_token.size(); }

  int id_of(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? -1 : it->second;
  }

  const std::string& token_of(std::size_t id) const {
    if (id >= id_to_token.size()) raise(ErrorKind::index, "token id out of range");
    return id_to_token[id];
  }

  void add(const std::string& token) {
    if (token_to_id.count(token)) return;
    token_to_id.emplace(token, static_cast<int>(id_to_token.size()));
    id_to_token.push_back(token);
  }
};

// Word inventory from the training split, most frequent first, ties broken
// lexicographically. max_size bounds the total size including the four
// reserved tokens.
inline Vocab build_vocab(const std::vector<Example>& training, std::size_t max_size) {
  if (max_size < 5)
    raise(ErrorKind::config, "build_vocab: max_size must allow reserved tokens plus at least one word");
  std::map<std::string, std::size_t> counts;
  for (const auto& e : training) {
    for (const std::string* field : {&e.previous, &e.target, &e.next, &e.mwe})
      for (const auto& w : whitespace_words(*field)) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> entries(counts.begin(), counts.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (const auto& [word, count] : entries) {
    (void)count;
    if (v.size() >= max_size) break;
    v.add(word);
  }
  return v;
}

// Greedy longest-prefix word encoding. Whole in-vocabulary words map to one
// id; otherwise the longest known prefixes are peeled off in turn, and the
// first unmatched remainder becomes a single [UNK].
inline void encode_word_greedy(const Vocab& v, const std::string& word, std::vector<int>& out) {
  std::size_t pos = 0;
  while (pos < word.size()) {
    int match = -1;
    std::size_t match_len = 0;
    for (std::size_t len = word.size() - pos; len >= 1; --len) {
      int id = v.id_of(word.substr(pos, len));
      if (id >= 0) {
        match = id;
        match_len = len;
        break;
      }
    }
    if (match < 0) {
      out.push_back(Vocab::kUnk);
      return;
    }
    out.push_back(match);
    pos += match_len;
  }
}

inline std::vector<int> tokenize_to_ids(const Vocab& v, const std::string& text) {
  std::vector<int> ids;
  for (const auto& w : whitespace_words(text)) encode_word_greedy(v, w, ids);
  return ids;
}

inline std::string decode_ids(const Vocab& v, const std::vector<int>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0) raise(ErrorKind::index, "decode: negative token id");
    if (i) out += ' ';
    out += v.token_of(static_cast<std::size_t>(ids[i]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Example encoding and batching
// ---------------------------------------------------------------------------

// Sequence layout: [CLS] context [SEP] mwe [SEP], where context is the
// concatenation of previous, target and next sentences. When the sequence
// would exceed max_len, context tokens are dropped from the right; the mwe
// segment and both separators are never truncated.
inline std::vector<int> encode_example(const Vocab& v, const Example& e, std::size_t max_len) {
  std::vector<int> mwe_ids = tokenize_to_ids(v, e.mwe);
  if (mwe_ids.empty()) raise(ErrorKind::encoding, "encode: mwe produced no tokens");
  if (max_len < mwe_ids.size() + 3)
    raise(ErrorKind::encoding, "encode: max_len " + std::to_string(max_len) +
                                   " cannot hold mwe of " + std::to_string(mwe_ids.size()) +
                                   " tokens plus markers");
  std::string context;
  for (const std::string* part : {&e.previous, &e.target, &e.next}) {
    if (part->empty()) continue;
    if (!context.empty()) context += ' ';
    context += *part;
  }
  std::vector<int> ctx_ids = tokenize_to_ids(v, context);
  std::size_t budget = max_len - mwe_ids.size() - 3;
  if (ctx_ids.size() > budget) ctx_ids.resize(budget);
  std::vector<int> ids;
  ids.reserve(ctx_ids.size() + mwe_ids.size() + 3);
  ids.push_back(Vocab::kCls);
  ids.insert(ids.end(), ctx_ids.begin(), ctx_ids.end());
  ids.push_back(Vocab::kSep);
  ids.insert(ids.end(), mwe_ids.begin(), mwe_ids.end());
  ids.push_back(Vocab::kSep);
  return ids;
}

struct EncodedBatch {
  std::size_t batch = 0;
  std::size_t tokens = 0;
  std::vector<int> token_ids;       // [batch x tokens], row-major
  std::vector<int> attention_mask;  // 1 = real token, 0 = padding
  std::vector<int> labels;
  std::vector<std::size_t> example_index;  // indices into the source example list
};

// Splits examples into batches of batch_size (last one may be short). Rows in
// a batch are padded with [PAD] to the longest row of that batch. Order is a
// pure function of the seed when shuffling.
inline std::vector<EncodedBatch> make_batches(const std::vector<Example>& examples, const Vocab& v,
                                              std::size_t batch_size, std::size_t max_len,
                                              std::uint64_t seed, bool shuffle) {
  if (batch_size == 0) raise(ErrorKind::config, "make_batches: batch_size must be positive");
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle) {
    Rng rng(seed);
    rng.shuffle(order);
  }
  std::vector<EncodedBatch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    std::size_t count = std::min(batch_size, order.size() - start);
    std::vector<std::vector<int>> rows(count);
    std::size_t tokens = 1;
    for (std::size_t r = 0; r < count; ++r) {
      rows[r] = encode_example(v, examples[order[start + r]], max_len);
      tokens = std::max(tokens, rows[r].size());
    }
    EncodedBatch b;
    b.batch = count;
    b.tokens = tokens;
    b.token_ids.assign(count * tokens, Vocab::kPad);
    b.attention_mask.assign(count * tokens, 0);
    b.labels.resize(count);
    b.example_index.resize(count);
    for (std::size_t r = 0; r < count; ++r) {
      const Example& e = examples[order[start + r]];
      for (std::size_t t = 0; t < rows[r].size(); ++t) {
        b.token_ids[r * tokens + t] = rows[r][t];
        b.attention_mask[r * tokens + t] = 1;
      }
      b.labels[r] = e.label;
      b.example_index[r] = order[start + r];
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Data-condition validators
// ---------------------------------------------------------------------------

struct ValidationReport {
  bool pass = true;
  std::vector<std::string> issues;

  void fail(std::string issue) {
    pass = false;
    issues.push_back(std::move(issue));
  }
};

// Zero-shot condition: no multiword expression of the training split may
// occur in any evaluation split.
inline ValidationReport validate_zero_shot(const DatasetSplit& train,
                                           const std::vector<const DatasetSplit*>& eval_splits) {
  ValidationReport report;
  std::set<std::string> train_mwes;
  for (const auto& e : train.examples) train_mwes.insert(ascii_lower(e.mwe));
  for (const DatasetSplit* split : eval_splits) {
    std::set<std::string> seen;
    for (const auto& e : split->examples) {
      std::string key = ascii_lower(e.mwe);
      if (train_mwes.count(key) && seen.insert(key).second)
        report.fail("mwe '" + key + "' appears in both train and " + split->name);
    }
  }
  return report;
}

// One-shot condition: every expression evaluated on must have exactly one
// idiomatic and one non-idiomatic training occurrence available, and no
// evaluation sentence may literally appear in training.
inline ValidationReport validate_one_shot(const DatasetSplit& train, const DatasetSplit& eval_split) {
  ValidationReport report;
  std::map<std::string, std::pair<int, int>> train_counts;  // mwe -> (label0, label1)
  std::set<std::string> train_sentences;
  for (const auto& e : train.examples) {
    auto& c = train_counts[ascii_lower(e.mwe)];
    (e.label == 0 ? c.first : c.second) += 1;
    train_sentences.insert(e.target);
  }
  std::set<std::string> seen;
  for (const auto& e : eval_split.examples) {
    std::string key = ascii_lower(e.mwe);
    if (!seen.insert(key).second) continue;
    auto it = train_counts.find(key);
    int n0 = it == train_counts.end() ? 0 : it->second.first;
    int n1 = it == train_counts.end() ? 0 : it->second.second;
    if (n0 < 1)
      report.fail("mwe '" + key + "': no idiomatic (label 0) training example for " + eval_split.name);
    if (n1 < 1)
      report.fail("mwe '" + key + "': no non-idiomatic (label 1) training example for " + eval_split.name);
  }
  for (const auto& e : eval_split.examples)
    if (train_sentences.count(e.target))
      report.fail("sentence of " + eval_split.name + " example '" + e.id + "' literally appears in train");
  return report;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

struct SynthConfig {
  std::uint64_t seed = 7;
  std::size_t n_mwes = 32;
  std::size_t examples_per_mwe = 12;
  std::string setting = "zero_shot";  // zero_shot | one_shot
};

struct SyntheticDataset {
  SynthConfig config;
  DatasetSplit train{"train", {}};
  DatasetSplit dev{"dev", {}};
  DatasetSplit test{"test", {}};
};

namespace detail {

inline const std::vector<std::string>& synth_syllables() {
  static const std::vector<std::string> s = {
      "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du", "fa", "fe", "fi", "fo",
      "fu", "ga", "ge", "gi", "go", "gu", "ka", "ke", "ki", "ko", "ku", "la", "le", "li",
      "lo", "lu", "ma", "me", "mi", "mo", "mu", "na", "ne", "ni", "no", "nu", "pa", "pe",
      "pi", "po", "pu", "ra", "re", "ri", "ro", "ru", "sa", "se", "si", "so", "su", "ta",
      "te", "ti", "to", "tu", "va", "ve", "vi", "vo", "vu", "za", "ze", "zi", "zo", "zu"};
  return s;
}

inline std::string synth_word(Rng& rng, std::unordered_set<std::string>& used) {
  const auto& syl = synth_syllables();
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::size_t n = 2 + rng.below(2);
    std::string w;
    for (std::size_t i = 0; i < n; ++i) w += syl[rng.below(syl.size())];
    if (used.insert(w).second) return w;
  }
  raise(ErrorKind::contract, "synthetic lexicon exhausted");
}

}  // namespace detail

// Generates a deterministic synthetic corpus. The label of an example is
// carried only by cue words in the context (one cue inventory per class);
// every expression occurs with both labels, so expression identity alone
// predicts nothing better than chance.
inline SyntheticDataset generate_synthetic(const SynthConfig& config) {
  if (config.setting != "zero_shot" && config.setting != "one_shot")
    raise(ErrorKind::config, "synthetic: setting must be zero_shot or one_shot, found '" + config.setting + "'");
  if (config.n_mwes < 4) raise(ErrorKind::config, "synthetic: n_mwes must be at least 4");
  if (config.examples_per_mwe < 4)
    raise(ErrorKind::config, "synthetic: examples_per_mwe must be at least 4");

  Rng lex_rng(derive_seed(config.seed, "lexicon"));
  std::unordered_set<std::string> used;
  std::vector<std::string> mwe_list;
  for (std::size_t i = 0; i < config.n_mwes; ++i) {
    std::string a = detail::synth_word(lex_rng, used);
    std::string b = detail::synth_word(lex_rng, used);
    mwe_list.push_back(a + " " + b);
  }
  std::vector<std::string> idiom_cues, literal_cues, neutral;
  for (int i = 0; i < 12; ++i) idiom_cues.push_back(detail::synth_word(lex_rng, used));
  for (int i = 0; i < 12; ++i) literal_cues.push_back(detail::synth_word(lex_rng, used));
  for (int i = 0; i < 48; ++i) neutral.push_back(detail::synth_word(lex_rng, used));

  std::unordered_set<std::string> unique_sentences;
  auto make_example = [&](std::size_t mwe_idx, std::size_t j, int label, Rng& rng) {
    const auto& cues = label == 0 ? idiom_cues : literal_cues;
    Example e;
    e.id = "syn-" + std::to_string(mwe_idx) + "-" + std::to_string(j);
    e.language = "EN";
    e.mwe = mwe_list[mwe_idx];
    e.label = label;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 64) raise(ErrorKind::contract, "synthetic: sentence space exhausted");
      std::vector<std::string> context;
      std::size_t n_cues = 2 + rng.below(2);
      std::vector<std::size_t> cue_idx;
      while (cue_idx.size() < n_cues) {
        std::size_t c = rng.below(cues.size());
        if (std::find(cue_idx.begin(), cue_idx.end(), c) == cue_idx.end()) cue_idx.push_back(c);
      }
      for (std::size_t c : cue_idx) context.push_back(cues[c]);
      std::size_t n_neutral = 3 + rng.below(4) + static_cast<std::size_t>(attempt);
      for (std::size_t i = 0; i < n_neutral; ++i) context.push_back(neutral[rng.below(neutral.size())]);
      rng.shuffle(context);
      std::size_t cut = rng.below(context.size() + 1);
      std::string target;
      for (std::size_t i = 0; i < cut; ++i) target += context[i] + " ";
      target += e.mwe;
      for (std::size_t i = cut; i < context.size(); ++i) target += " " + context[i];
      if (!unique_sentences.insert(target).second) continue;
      e.target = target;
      break;
    }
    auto side_sentence = [&](Rng& r) {
      std::size_t n = 2 + r.below(3);
      std::string s;
      for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + neutral[r.below(neutral.size())];
      return s;
    };
    if (rng.bernoulli(0.3)) e.previous = side_sentence(rng);
    if (rng.bernoulli(0.3)) e.next = side_sentence(rng);
    return e;
  };

  SyntheticDataset out;
  out.config = config;
  std::size_t epm = config.examples_per_mwe;
  if (config.setting == "zero_shot") {
    std::size_t n_train = config.n_mwes / 2;
    std::size_t n_dev = std::max<std::size_t>(1, config.n_mwes / 4);
    for (std::size_t i = 0; i < config.n_mwes; ++i) {
      Rng rng(derive_seed(config.seed, "examples", i));
      DatasetSplit& split = i < n_train ? out.train : i < n_train + n_dev ? out.dev : out.test;
      // The starting label alternates across expressions so odd example
      // counts do not skew a split by more than one.
      for (std::size_t j = 0; j < epm; ++j)
        split.examples.push_back(make_example(i, j, static_cast<int>((j + i) % 2), rng));
    }
  } else {
    for (std::size_t i = 0; i < config.n_mwes; ++i) {
      Rng rng(derive_seed(config.seed, "examples", i));
      // One idiomatic and one non-idiomatic occurrence go to train; the rest
      // alternate between dev and test in label-balanced pairs.
      out.train.examples.push_back(make_example(i, 0, 0, rng));
      out.train.examples.push_back(make_example(i, 1, 1, rng));
      std::size_t pair = 0;
      std::size_t j = 2;
      for (; j + 1 < epm; j += 2, ++pair) {
        DatasetSplit& split = (pair + i) % 2 == 0 ? out.dev : out.test;
        split.examples.push_back(make_example(i, j, static_cast<int>((j + i) % 2), rng));
        split.examples.push_back(make_example(i, j + 1, static_cast<int>((j + 1 + i) % 2), rng));
      }
      if (j < epm) {
        DatasetSplit& split = (i / 2) % 2 == 0 ? out.dev : out.test;
        split.examples.push_back(make_example(i, j, static_cast<int>((i + 1) % 2), rng));
      }
    }
  }
  return out;
}

inline std::string synth_manifest(const SyntheticDataset& d) {
  std::string m;
  m += "seed = " + std::to_string(d.config.seed) + "\n";
  m += "n_mwes = " + std::to_string(d.config.n_mwes) + "\n";
  m += "examples_per_mwe = " + std::to_string(d.config.examples_per_mwe) + "\n";
  m += "setting = " + d.config.setting + "\n";
  m += "train_examples = " + std::to_string(d.train.examples.size()) + "\n";
  m += "dev_examples = " + std::to_string(d.dev.examples.size()) + "\n";
  m += "test_examples = " + std::to_string(d.test.examples.size()) + "\n";
  return m;
}

}  // namespace ivat
