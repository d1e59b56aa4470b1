#pragma once

// Multi-seed comparison of training methods on a fixed dataset. Every
// (method, seed) cell trains from the same seed-derived initialization and
// sees the same shuffled batch order, so methods differ only in their loss.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ivat/checkpoint.hpp"
#include "ivat/error.hpp"
#include "ivat/eval.hpp"
#include "ivat/training.hpp"

#include "json.hpp"

namespace ivat {

struct CompareCell {
  std::uint64_t seed = 0;
  double dev_macro_f1 = 0.0;
  double test_macro_f1 = 0.0;
  bool has_test = false;
  bool failed = false;
  std::string failure;
};

struct CompareRow {
  std::string method;
  std::vector<CompareCell> cells;
  double dev_mean = 0.0, dev_std = 0.0;
  double test_mean = 0.0, test_std = 0.0;
  std::size_t n_ok = 0;
};

struct CompareVerdict {
  std::string method;
  std::string baseline;
  double dev_margin = 0.0;
  bool holds = false;
};

struct ComparisonResult {
  std::string setting;
  std::vector<CompareRow> rows;
  std::vector<CompareVerdict> verdicts;
};

namespace detail {

inline void mean_std(const std::vector<double>& xs, double& mean, double& std_out) {
  mean = 0.0;
  std_out = 0.0;
  if (xs.empty()) return;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - mean) * (x - mean);
  std_out = std::sqrt(sq / static_cast<double>(xs.size()));
}

}  // namespace detail

inline ComparisonResult compare_methods(const DatasetSplit& train_split, const DatasetSplit& dev_split,
                                        const DatasetSplit* test_split, const Vocab& vocab,
                                        const ModelConfig& base_model, const TrainConfig& base_train,
                                        const AdvConfig& adv, const std::vector<std::string>& methods,
                                        const std::vector<std::uint64_t>& seeds,
                                        const std::string& setting = "") {
  if (methods.empty()) raise(ErrorKind::config, "compare: no methods given");
  if (seeds.empty()) raise(ErrorKind::config, "compare: no seeds given");
  std::vector<TrainMethod> parsed;
  for (const auto& m : methods) parsed.push_back(parse_method(m));

  ComparisonResult result;
  result.setting = setting;
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    CompareRow row;
    row.method = methods[mi];
    std::vector<double> dev_values, test_values;
    for (std::uint64_t seed : seeds) {
      CompareCell cell;
      cell.seed = seed;
      try {
        ModelConfig mc = base_model;
        mc.init_seed = derive_seed(seed, "init");
        EncoderModel model = init_model(mc);
        TrainConfig tc = base_train;
        tc.method = parsed[mi];
        tc.seed = seed;
        TrainResult tr = train_run(model, train_split, &dev_split, vocab, tc, adv);
        if (tr.aborted) raise(ErrorKind::numeric, "training aborted: " + tr.abort_reason);
        cell.dev_macro_f1 = tr.best_dev_macro_f1;
        if (test_split != nullptr && !test_split->examples.empty()) {
          cell.test_macro_f1 = evaluate_split(model, *test_split, vocab, tc.eval_batch_size).overall.macro_f1;
          cell.has_test = true;
        }
        dev_values.push_back(cell.dev_macro_f1);
        if (cell.has_test) test_values.push_back(cell.test_macro_f1);
        ++row.n_ok;
      } catch (const Error& e) {
        cell.failed = true;
        cell.failure = e.what();
      }
      row.cells.push_back(cell);
    }
    detail::mean_std(dev_values, row.dev_mean, row.dev_std);
    detail::mean_std(test_values, row.test_mean, row.test_std);
    result.rows.push_back(std::move(row));
  }

  const CompareRow* standard = nullptr;
  for (const auto& r : result.rows)
    if (r.method == "standard") standard = &r;
  if (standard != nullptr && standard->n_ok > 0) {
    for (const auto& r : result.rows) {
      if (r.method == "standard" || r.n_ok == 0) continue;
      CompareVerdict v;
      v.method = r.method;
      v.baseline = "standard";
      v.dev_margin = r.dev_mean - standard->dev_mean;
      v.holds = v.dev_margin >= 0.0;
      result.verdicts.push_back(v);
    }
  }
  return result;
}

inline nlohmann::ordered_json comparison_to_json(const ComparisonResult& r) {
  nlohmann::ordered_json j;
  j["setting"] = r.setting;
  j["methods"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    nlohmann::ordered_json rj;
    rj["method"] = row.method;
    rj["dev_macro_f1_mean"] = row.dev_mean;
    rj["dev_macro_f1_std"] = row.dev_std;
    rj["test_macro_f1_mean"] = row.test_mean;
    rj["test_macro_f1_std"] = row.test_std;
    rj["runs_ok"] = row.n_ok;
    rj["runs_total"] = row.cells.size();
    rj["cells"] = nlohmann::ordered_json::array();
    for (const auto& c : row.cells) {
      nlohmann::ordered_json cj;
      cj["seed"] = c.seed;
      if (c.failed) {
        cj["failed"] = c.failure;
      } else {
        cj["dev_macro_f1"] = c.dev_macro_f1;
        if (c.has_test) cj["test_macro_f1"] = c.test_macro_f1;
      }
      rj["cells"].push_back(cj);
    }
    j["methods"].push_back(rj);
  }
  j["verdicts"] = nlohmann::ordered_json::array();
  for (const auto& v : r.verdicts) {
    nlohmann::ordered_json vj;
    vj["method"] = v.method;
    vj["baseline"] = v.baseline;
    vj["dev_margin"] = v.dev_margin;
    vj["holds"] = v.holds;
    j["verdicts"].push_back(vj);
  }
  return j;
}

inline std::string comparison_to_csv(const ComparisonResult& r) {
  std::string out = "method,setting,seeds_ok,seeds_total,dev_macro_f1_mean,dev_macro_f1_std,"
                    "test_macro_f1_mean,test_macro_f1_std\n";
  char buf[256];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%zu,%zu,%.6f,%.6f,%.6f,%.6f\n", row.method.c_str(),
                  r.setting.c_str(), row.n_ok, row.cells.size(), row.dev_mean, row.dev_std,
                  row.test_mean, row.test_std);
    out += buf;
  }
  return out;
}

inline std::string comparison_to_text(const ComparisonResult& r) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %-22s %-22s %s\n", "method", "dev macro-F1", "test macro-F1", "runs");
  out += buf;
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%-16s %.4f +/- %.4f       %.4f +/- %.4f       %zu/%zu\n",
                  row.method.c_str(), row.dev_mean, row.dev_std, row.test_mean, row.test_std,
                  row.n_ok, row.cells.size());
    out += buf;
    for (const auto& c : row.cells) {
      if (c.failed) {
        std::snprintf(buf, sizeof buf, "    seed %llu: FAILED (%s)\n",
                      static_cast<unsigned long long>(c.seed), c.failure.c_str());
      } else if (c.has_test) {
        std::snprintf(buf, sizeof buf, "    seed %llu: dev %.4f  test %.4f\n",
                      static_cast<unsigned long long>(c.seed), c.dev_macro_f1, c.test_macro_f1);
      } else {
        std::snprintf(buf, sizeof buf, "    seed %llu: dev %.4f\n",
                      static_cast<unsigned long long>(c.seed), c.dev_macro_f1);
      }
      out += buf;
    }
  }
  for (const auto& v : r.verdicts) {
    std::snprintf(buf, sizeof buf, "%s vs %s on dev: margin %+.4f -> %s\n", v.method.c_str(),
                  v.baseline.c_str(), v.dev_margin, v.holds ? "holds" : "does not hold");
    out += buf;
  }
  return out;
}

}  // namespace ivat
