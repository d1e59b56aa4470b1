#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ivat/csv.hpp"
#include "ivat/data.hpp"

using namespace ivat;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  std::string path = std::string(::testing::TempDir()) + name;
  write_text_file(path, content);
  return path;
}

const char* kGoodCsv =
    "id,language,mwe,previous,target,next,label\n"
    "ex1,EN,night owl,He worked late.,She is a night owl by habit.,Nobody minded.,0\n"
    "ex2,en,night owl,,A night owl perched on the fence.,,1\n"
    "ex3,PT,p de galinha,Antes.,Ela notou um p de galinha no espelho.,Depois.,0\n";

}  // namespace

TEST(Csv, QuotingRoundTripsCommasQuotesNewlines) {
  std::vector<std::string> fields{"plain", "with,comma", "with \"quote\"", "line\nbreak", ""};
  std::string line = csv_join(fields);
  auto rows = csv_parse(line, "mem");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].fields, fields);
}

TEST(Csv, HandParsedQuotedField) {
  auto rows = csv_parse("a,\"b,c\",\"d\"\"e\"\r\nf,g,h\n", "mem");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].fields, (std::vector<std::string>{"a", "b,c", "d\"e"}));
  EXPECT_EQ(rows[1].fields, (std::vector<std::string>{"f", "g", "h"}));
  EXPECT_EQ(rows[1].line, 2u);
}

TEST(Csv, StrayQuoteRaisesSchema) {
  try {
    csv_parse("a,b\"c\n", "mem");
    FAIL() << "expected schema error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::schema);
  }
}

TEST(Loader, ReadsRowsVerbatim) {
  std::string path = write_temp("good.csv", kGoodCsv);
  std::vector<std::string> warnings;
  auto examples = load_examples_csv(path, &warnings);
  ASSERT_EQ(examples.size(), 3u);
  EXPECT_EQ(examples[0].id, "ex1");
  EXPECT_EQ(examples[0].mwe, "night owl");
  EXPECT_EQ(examples[0].target, "She is a night owl by habit.");
  EXPECT_EQ(examples[0].label, 0);
  EXPECT_EQ(examples[1].language, "EN");  // lowercase input normalized
  EXPECT_EQ(examples[1].label, 1);
  EXPECT_EQ(examples[2].language, "PT");
  EXPECT_TRUE(warnings.empty());
}

TEST(Loader, BadLabelNamesTheLine) {
  std::string path = write_temp("badlabel.csv",
                                "id,language,mwe,previous,target,next,label\n"
                                "a,EN,x y,,x y here,,0\n"
                                "b,EN,x y,,x y there,,2\n");
  try {
    load_examples_csv(path);
    FAIL() << "expected value error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::value);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("label"), std::string::npos);
  }
}

TEST(Loader, WrongColumnCountRaisesSchema) {
  std::string path = write_temp("cols.csv",
                                "id,language,mwe,previous,target,next,label\n"
                                "a,EN,x y,,x y here,0\n");
  try {
    load_examples_csv(path);
    FAIL() << "expected schema error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::schema);
  }
}

TEST(Loader, WrongHeaderRaisesSchema) {
  std::string path = write_temp("hdr.csv", "id,lang,mwe,previous,target,next,label\na,EN,x,,x,,0\n");
  try {
    load_examples_csv(path);
    FAIL() << "expected schema error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::schema);
  }
}

TEST(Loader, EmptyMweRaisesValue) {
  std::string path = write_temp("emptymwe.csv",
                                "id,language,mwe,previous,target,next,label\n"
                                "a,EN,,,some target,,0\n");
  try {
    load_examples_csv(path);
    FAIL() << "expected value error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::value);
  }
}

TEST(Loader, MweMissingFromTargetWarnsButKeepsRow) {
  std::string path = write_temp("warn.csv",
                                "id,language,mwe,previous,target,next,label\n"
                                "a,EN,big fish,,a sentence without it,,0\n");
  std::vector<std::string> warnings;
  auto examples = load_examples_csv(path, &warnings);
  EXPECT_EQ(examples.size(), 1u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("big fish"), std::string::npos);
}

TEST(Loader, RoundTripThroughSaveAndLoad) {
  std::string path = write_temp("rt.csv", kGoodCsv);
  auto examples = load_examples_csv(path);
  std::string path2 = std::string(::testing::TempDir()) + "rt2.csv";
  save_examples_csv(path2, examples);
  auto again = load_examples_csv(path2);
  ASSERT_EQ(again.size(), examples.size());
  for (std::size_t i = 0; i < again.size(); ++i) {
    EXPECT_EQ(again[i].id, examples[i].id);
    EXPECT_EQ(again[i].target, examples[i].target);
    EXPECT_EQ(again[i].label, examples[i].label);
  }
}

TEST(Validators, ZeroShotDetectsSharedMwe) {
  DatasetSplit train{"train", {{"a", "EN", "night owl", "", "a night owl", "", 0}}};
  DatasetSplit dev{"dev", {{"b", "EN", "big fish", "", "a big fish", "", 0}}};
  DatasetSplit bad{"test", {{"c", "EN", "Night Owl", "", "a Night Owl", "", 1}}};
  EXPECT_TRUE(validate_zero_shot(train, {&dev}).pass);
  ValidationReport r = validate_zero_shot(train, {&dev, &bad});
  EXPECT_FALSE(r.pass);  // case-folded match must be caught
  ASSERT_FALSE(r.issues.empty());
  EXPECT_NE(r.issues[0].find("night owl"), std::string::npos);
}

TEST(Validators, OneShotNeedsBothLabelsPerMwe) {
  DatasetSplit train{"train",
                     {{"a", "EN", "night owl", "", "sees a night owl", "", 0},
                      {"b", "EN", "night owl", "", "feeds a night owl", "", 1}}};
  DatasetSplit eval{"dev", {{"c", "EN", "night owl", "", "meets a night owl", "", 0}}};
  EXPECT_TRUE(validate_one_shot(train, eval).pass);

  DatasetSplit train_one_label{"train", {{"a", "EN", "night owl", "", "sees a night owl", "", 0}}};
  EXPECT_FALSE(validate_one_shot(train_one_label, eval).pass);

  DatasetSplit train_missing{"train", {{"a", "EN", "big fish", "", "a big fish", "", 0},
                                       {"b", "EN", "big fish", "", "the big fish", "", 1}}};
  EXPECT_FALSE(validate_one_shot(train_missing, eval).pass);
}

TEST(Validators, OneShotRejectsLiteralTargetOverlap) {
  DatasetSplit train{"train",
                     {{"a", "EN", "night owl", "", "sees a night owl", "", 0},
                      {"b", "EN", "night owl", "", "feeds a night owl", "", 1}}};
  DatasetSplit eval{"dev", {{"c", "EN", "night owl", "", "sees a night owl", "", 0}}};
  EXPECT_FALSE(validate_one_shot(train, eval).pass);
}

TEST(Vocab, FrequencyThenLexicographicOrder) {
  std::vector<Example> train{
      {"a", "EN", "zz yy", "", "zz yy bb bb cc", "", 0},
      {"b", "EN", "zz yy", "", "zz yy aa bb cc", "", 1},
  };
  Vocab v = build_vocab(train, 64);
  // Counts: zz 4 (mwe counted), yy 4, bb 3, cc 2, aa 1.
  EXPECT_EQ(v.id_of("[PAD]"), 0);
  EXPECT_EQ(v.id_of("[SEP]"), 3);
  EXPECT_EQ(v.id_of("yy"), 4);  // ties at count 4 break lexicographically
  EXPECT_EQ(v.id_of("zz"), 5);
  EXPECT_EQ(v.id_of("bb"), 6);
  EXPECT_EQ(v.id_of("cc"), 7);
  EXPECT_EQ(v.id_of("aa"), 8);
  EXPECT_EQ(v.size(), 9u);

  Vocab capped = build_vocab(train, 6);
  EXPECT_EQ(capped.size(), 6u);
  EXPECT_EQ(capped.id_of("bb"), -1);

  Vocab again = build_vocab(train, 64);
  EXPECT_EQ(again.id_to_token, v.id_to_token);
}

TEST(Vocab, TooSmallCapRaises) {
  std::vector<Example> train{{"a", "EN", "x y", "", "x y", "", 0}};
  try {
    build_vocab(train, 4);
    FAIL() << "expected config error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

TEST(Encode, LayoutIsClsContextSepMweSep) {
  std::vector<Example> train{{"a", "EN", "night owl", "late shift", "she is a night owl", "", 0}};
  Vocab v = build_vocab(train, 64);
  Example e = train[0];
  auto ids = encode_example(v, e, 32);
  // [CLS] late shift she is a night owl [SEP] night owl [SEP]
  ASSERT_EQ(ids.size(), 12u);
  EXPECT_EQ(ids.front(), Vocab::kCls);
  EXPECT_EQ(ids[8], Vocab::kSep);
  EXPECT_EQ(ids[9], v.id_of("night"));
  EXPECT_EQ(ids[10], v.id_of("owl"));
  EXPECT_EQ(ids.back(), Vocab::kSep);
  EXPECT_EQ(decode_ids(v, ids),
            "[CLS] late shift she is a night owl [SEP] night owl [SEP]");
}

TEST(Encode, TruncationDropsContextNeverMwe) {
  std::vector<Example> train{{"a", "EN", "night owl", "w1 w2 w3 w4 w5 w6", "night owl target", "", 0}};
  Vocab v = build_vocab(train, 64);
  auto ids = encode_example(v, train[0], 8);
  // Budget for context is 8 - 2 - 3 = 3 tokens; mwe segment survives intact.
  ASSERT_EQ(ids.size(), 8u);
  EXPECT_EQ(ids[0], Vocab::kCls);
  EXPECT_EQ(ids[4], Vocab::kSep);
  EXPECT_EQ(ids[5], v.id_of("night"));
  EXPECT_EQ(ids[6], v.id_of("owl"));
  EXPECT_EQ(ids[7], Vocab::kSep);

  try {
    encode_example(v, train[0], 4);  // cannot hold 2 mwe tokens + 3 markers
    FAIL() << "expected encoding error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::encoding);
  }
}

TEST(Encode, UnknownWordBecomesSingleUnk) {
  std::vector<Example> train{{"a", "EN", "xx yy", "", "xx yy", "", 0}};
  Vocab v = build_vocab(train, 64);
  auto ids = tokenize_to_ids(v, "xx zzznever yy");
  ASSERT_EQ(ids.size(), 3u);
  EXPECT_EQ(ids[0], v.id_of("xx"));
  EXPECT_EQ(ids[1], Vocab::kUnk);
  EXPECT_EQ(ids[2], v.id_of("yy"));
}

TEST(Batches, SizesShuffleAndPartition) {
  std::vector<Example> examples;
  for (int i = 0; i < 10; ++i)
    examples.push_back({"e" + std::to_string(i), "EN", "x y", "", "x y number" + std::to_string(i), "", i % 2});
  Vocab v = build_vocab(examples, 128);

  auto batches = make_batches(examples, v, 4, 32, 7, true);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].batch, 4u);
  EXPECT_EQ(batches[1].batch, 4u);
  EXPECT_EQ(batches[2].batch, 2u);

  std::set<std::size_t> seen;
  for (const auto& b : batches)
    for (std::size_t idx : b.example_index) seen.insert(idx);
  EXPECT_EQ(seen.size(), 10u);  // every example exactly once

  auto again = make_batches(examples, v, 4, 32, 7, true);
  for (std::size_t i = 0; i < batches.size(); ++i)
    EXPECT_EQ(batches[i].token_ids, again[i].token_ids);

  auto plain = make_batches(examples, v, 4, 32, 7, false);
  for (std::size_t i = 0; i < plain[0].example_index.size(); ++i)
    EXPECT_EQ(plain[0].example_index[i], i);

  // Labels travel with their shuffled examples.
  for (const auto& b : batches)
    for (std::size_t r = 0; r < b.batch; ++r)
      EXPECT_EQ(b.labels[r], examples[b.example_index[r]].label);
}

TEST(Batches, PaddingAndMaskAgree) {
  std::vector<Example> examples{
      {"a", "EN", "x y", "", "x y", "", 0},
      {"b", "EN", "x y", "one two three four", "x y five six", "seven", 1},
  };
  Vocab v = build_vocab(examples, 128);
  auto batches = make_batches(examples, v, 2, 32, 0, false);
  ASSERT_EQ(batches.size(), 1u);
  const auto& b = batches[0];
  for (std::size_t r = 0; r < b.batch; ++r) {
    std::size_t real = encode_example(v, examples[r], 32).size();
    for (std::size_t t = 0; t < b.tokens; ++t) {
      bool is_real = t < real;
      EXPECT_EQ(b.attention_mask[r * b.tokens + t], is_real ? 1 : 0);
      if (!is_real) EXPECT_EQ(b.token_ids[r * b.tokens + t], Vocab::kPad);
    }
  }
}

TEST(Synthetic, ZeroShotSatisfiesItsValidator) {
  SynthConfig sc;
  sc.setting = "zero_shot";
  SyntheticDataset d = generate_synthetic(sc);
  EXPECT_TRUE(validate_zero_shot(d.train, {&d.dev, &d.test}).pass);
  EXPECT_FALSE(d.train.examples.empty());
  EXPECT_FALSE(d.dev.examples.empty());
  EXPECT_FALSE(d.test.examples.empty());
}

TEST(Synthetic, OneShotSatisfiesItsValidator) {
  SynthConfig sc;
  sc.setting = "one_shot";
  SyntheticDataset d = generate_synthetic(sc);
  EXPECT_TRUE(validate_one_shot(d.train, d.dev).pass);
  EXPECT_TRUE(validate_one_shot(d.train, d.test).pass);
}

TEST(Synthetic, DeterministicBytes) {
  SynthConfig sc;
  sc.seed = 123;
  SyntheticDataset a = generate_synthetic(sc);
  SyntheticDataset b = generate_synthetic(sc);
  EXPECT_EQ(examples_to_csv(a.train.examples), examples_to_csv(b.train.examples));
  EXPECT_EQ(examples_to_csv(a.dev.examples), examples_to_csv(b.dev.examples));
  EXPECT_EQ(examples_to_csv(a.test.examples), examples_to_csv(b.test.examples));

  sc.seed = 124;
  SyntheticDataset c = generate_synthetic(sc);
  EXPECT_NE(examples_to_csv(a.train.examples), examples_to_csv(c.train.examples));
}

TEST(Synthetic, SplitsAreLabelBalanced) {
  for (std::uint64_t seed : {1, 2, 3}) {
    for (const char* setting : {"zero_shot", "one_shot"}) {
      SynthConfig sc;
      sc.seed = seed;
      sc.setting = setting;
      sc.n_mwes = 9;              // odd on purpose
      sc.examples_per_mwe = 11;   // odd on purpose
      SyntheticDataset d = generate_synthetic(sc);
      for (const DatasetSplit* s : {&d.train, &d.dev, &d.test}) {
        long long diff = 0;
        for (const auto& e : s->examples) diff += e.label == 0 ? 1 : -1;
        EXPECT_LE(std::llabs(diff), 1) << setting << " seed " << seed << " split " << s->name;
      }
    }
  }
}

TEST(Synthetic, MweIdentityDoesNotDetermineLabel) {
  // Any MWE with at least two examples in a split must show both labels
  // somewhere in the dataset, otherwise the task degenerates to memorizing
  // the expression.
  SynthConfig sc;
  sc.n_mwes = 8;
  sc.examples_per_mwe = 12;
  for (const char* setting : {"zero_shot", "one_shot"}) {
    sc.setting = setting;
    SyntheticDataset d = generate_synthetic(sc);
    std::map<std::string, std::set<int>> labels_by_mwe;
    for (const DatasetSplit* s : {&d.train, &d.dev, &d.test})
      for (const auto& e : s->examples) labels_by_mwe[e.mwe].insert(e.label);
    for (const auto& [mwe, labels] : labels_by_mwe)
      EXPECT_EQ(labels.size(), 2u) << setting << " mwe " << mwe;
  }
}

TEST(Synthetic, TargetsEmbedTheirMweAndAreUnique) {
  SynthConfig sc;
  SyntheticDataset d = generate_synthetic(sc);
  std::set<std::string> targets;
  for (const DatasetSplit* s : {&d.train, &d.dev, &d.test}) {
    for (const auto& e : s->examples) {
      EXPECT_NE(ascii_lower(e.target).find(ascii_lower(e.mwe)), std::string::npos);
      targets.insert(e.target);
    }
  }
  std::size_t total = d.train.examples.size() + d.dev.examples.size() + d.test.examples.size();
  EXPECT_EQ(targets.size(), total);
}

TEST(Synthetic, UnsatisfiableConfigRaises) {
  SynthConfig sc;
  sc.n_mwes = 3;
  try {
    generate_synthetic(sc);
    FAIL() << "expected config error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
    EXPECT_NE(std::string(e.what()).find("n_mwes"), std::string::npos);
  }
  SynthConfig sc2;
  sc2.setting = "few_shot";
  try {
    generate_synthetic(sc2);
    FAIL() << "expected config error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

TEST(Synthetic, MweIdentityAloneIsUninformative) {
  // A classifier that memorizes the majority label per expression on train
  // (falling back to the global majority for unseen expressions) must stay
  // near chance on zero-shot dev: labels are carried by context cues only.
  double acc_sum = 0.0;
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    SynthConfig sc;
    sc.seed = seed;
    SyntheticDataset d = generate_synthetic(sc);
    std::map<std::string, std::array<int, 2>> votes;
    std::array<int, 2> global{0, 0};
    for (const auto& e : d.train.examples) {
      votes[ascii_lower(e.mwe)][e.label] += 1;
      global[e.label] += 1;
    }
    int correct = 0;
    for (const auto& e : d.dev.examples) {
      auto it = votes.find(ascii_lower(e.mwe));
      const std::array<int, 2>& v = it == votes.end() ? global : it->second;
      int pred = v[1] > v[0] ? 1 : 0;
      correct += pred == e.label ? 1 : 0;
    }
    acc_sum += double(correct) / double(d.dev.examples.size());
  }
  EXPECT_LE(acc_sum / 5.0, 0.55);
}

TEST(Synthetic, ManifestRecordsCounts) {
  SynthConfig sc;
  SyntheticDataset d = generate_synthetic(sc);
  std::string m = synth_manifest(d);
  EXPECT_NE(m.find("setting"), std::string::npos);
  EXPECT_NE(m.find("train_examples"), std::string::npos);
  EXPECT_NE(m.find(std::to_string(d.train.examples.size())), std::string::npos);
}

TEST(Words, SplitAndLowercase) {
  auto w = whitespace_words("  She IS a Night\tOwl. ");
  ASSERT_EQ(w.size(), 5u);
  EXPECT_EQ(w[0], "she");
  EXPECT_EQ(w[3], "night");
  EXPECT_EQ(w[4], "owl.");
}
