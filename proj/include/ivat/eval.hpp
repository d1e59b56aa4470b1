#pragma once

// Binary classification metrics. Convention throughout: rows of the
// confusion matrix are gold labels, columns are predictions; class 0 is
// idiomatic, class 1 non-idiomatic. Undefined ratios (0/0) score 0.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ivat/data.hpp"
#include "ivat/error.hpp"
#include "ivat/model.hpp"
#include "ivat/tensor.hpp"

#include "json.hpp"

namespace ivat {

struct ConfusionMatrix {
  long long cells[2][2] = {{0, 0}, {0, 0}};  // [gold][pred]

  long long total() const { return cells[0][0] + cells[0][1] + cells[1][0] + cells[1][1]; }
};

inline ConfusionMatrix confusion_matrix(const std::vector<int>& preds, const std::vector<int>& gold) {
  if (preds.size() != gold.size())
    raise(ErrorKind::contract, "confusion_matrix: prediction and gold lengths differ");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] > 1 || gold[i] < 0 || gold[i] > 1)
      raise(ErrorKind::value, "confusion_matrix: labels must be 0 or 1");
    ++cm.cells[gold[i]][preds[i]];
  }
  return cm;
}

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long long support = 0;
};

inline ClassMetrics class_metrics(const ConfusionMatrix& cm, int cls) {
  if (cls < 0 || cls > 1) raise(ErrorKind::value, "class_metrics: class must be 0 or 1");
  long long tp = cm.cells[cls][cls];
  long long fp = cm.cells[1 - cls][cls];
  long long fn = cm.cells[cls][1 - cls];
  ClassMetrics m;
  m.support = tp + fn;
  m.precision = (tp + fp) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  m.recall = (tp + fn) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  m.f1 = (m.precision + m.recall) == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

inline double macro_f1(const ConfusionMatrix& cm) {
  return 0.5 * (class_metrics(cm, 0).f1 + class_metrics(cm, 1).f1);
}

inline double accuracy(const ConfusionMatrix& cm) {
  long long n = cm.total();
  return n == 0 ? 0.0 : static_cast<double>(cm.cells[0][0] + cm.cells[1][1]) / static_cast<double>(n);
}

struct ScoreBlock {
  ConfusionMatrix cm;
  ClassMetrics per_class[2];
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  long long n = 0;
};

inline ScoreBlock score_block(const ConfusionMatrix& cm) {
  ScoreBlock b;
  b.cm = cm;
  b.per_class[0] = class_metrics(cm, 0);
  b.per_class[1] = class_metrics(cm, 1);
  b.macro_f1 = macro_f1(cm);
  b.accuracy = accuracy(cm);
  b.n = cm.total();
  return b;
}

struct MetricsReport {
  ScoreBlock overall;
  std::map<std::string, ScoreBlock> per_language;
};

inline MetricsReport build_report(const std::vector<int>& preds, const std::vector<int>& gold,
                                  const std::vector<std::string>& languages) {
  if (languages.size() != preds.size())
    raise(ErrorKind::contract, "build_report: language list length mismatch");
  MetricsReport r;
  r.overall = score_block(confusion_matrix(preds, gold));
  std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> by_lang;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto& bucket = by_lang[languages[i]];
    bucket.first.push_back(preds[i]);
    bucket.second.push_back(gold[i]);
  }
  for (const auto& [lang, bucket] : by_lang)
    r.per_language[lang] = score_block(confusion_matrix(bucket.first, bucket.second));
  return r;
}

// --- JSON serialization (lossless double round-trip via nlohmann) ---

inline nlohmann::ordered_json score_block_to_json(const ScoreBlock& b) {
  nlohmann::ordered_json j;
  j["n_examples"] = b.n;
  j["accuracy"] = b.accuracy;
  j["macro_f1"] = b.macro_f1;
  j["confusion_matrix"] = {{b.cm.cells[0][0], b.cm.cells[0][1]}, {b.cm.cells[1][0], b.cm.cells[1][1]}};
  j["per_class"] = nlohmann::ordered_json::array();
  const char* names[2] = {"idiomatic", "non_idiomatic"};
  for (int c = 0; c < 2; ++c) {
    nlohmann::ordered_json cj;
    cj["label"] = c;
    cj["name"] = names[c];
    cj["precision"] = b.per_class[c].precision;
    cj["recall"] = b.per_class[c].recall;
    cj["f1"] = b.per_class[c].f1;
    cj["support"] = b.per_class[c].support;
    j["per_class"].push_back(cj);
  }
  return j;
}

inline ScoreBlock score_block_from_json(const nlohmann::json& j) {
  ScoreBlock b;
  for (int g = 0; g < 2; ++g)
    for (int p = 0; p < 2; ++p) b.cm.cells[g][p] = j.at("confusion_matrix").at(g).at(p).get<long long>();
  b.n = j.at("n_examples").get<long long>();
  b.accuracy = j.at("accuracy").get<double>();
  b.macro_f1 = j.at("macro_f1").get<double>();
  for (int c = 0; c < 2; ++c) {
    const auto& cj = j.at("per_class").at(c);
    b.per_class[c].precision = cj.at("precision").get<double>();
    b.per_class[c].recall = cj.at("recall").get<double>();
    b.per_class[c].f1 = cj.at("f1").get<double>();
    b.per_class[c].support = cj.at("support").get<long long>();
  }
  return b;
}

inline nlohmann::ordered_json report_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j = score_block_to_json(r.overall);
  j["per_language"] = nlohmann::ordered_json::object();
  for (const auto& [lang, block] : r.per_language) j["per_language"][lang] = score_block_to_json(block);
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.overall = score_block_from_json(j);
  for (const auto& [lang, block] : j.at("per_language").items())
    r.per_language[lang] = score_block_from_json(block);
  return r;
}

// --- model evaluation ---

// Logit tie-break goes to class 0.
inline int argmax_class(const double* logits) { return logits[1] > logits[0] ? 1 : 0; }

inline std::vector<int> predict_split(const EncoderModel& m, const std::vector<Example>& examples,
                                      const Vocab& vocab, std::size_t batch_size = 64) {
  NoTape guard;
  std::vector<int> preds(examples.size(), 0);
  auto batches = make_batches(examples, vocab, batch_size, m.config.max_len, 0, false);
  for (const auto& b : batches) {
    ClassifierOutput out = forward_batch(m, b, false, nullptr);
    const auto& logits = out.logits.value();
    for (std::size_t r = 0; r < b.batch; ++r)
      preds[b.example_index[r]] = argmax_class(logits.data() + r * m.config.n_classes);
  }
  return preds;
}

inline MetricsReport evaluate_split(const EncoderModel& m, const DatasetSplit& split, const Vocab& vocab,
                                    std::size_t batch_size = 64) {
  if (split.examples.empty()) raise(ErrorKind::value, "evaluate: split '" + split.name + "' is empty");
  std::vector<int> preds = predict_split(m, split.examples, vocab, batch_size);
  std::vector<int> gold;
  std::vector<std::string> langs;
  for (const auto& e : split.examples) {
    gold.push_back(e.label);
    langs.push_back(e.language);
  }
  return build_report(preds, gold, langs);
}

}  // namespace ivat
