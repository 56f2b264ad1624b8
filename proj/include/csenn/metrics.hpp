#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace csenn {

struct ActionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  double precision() const;
  double recall() const;
  // 2TP / (2TP + FP + FN); 0 when the action is never predicted nor present.
  double f1() const;
  bool degenerate() const { return tp + fp + fn == 0; }

  ActionCounts& operator+=(const ActionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

struct EvalResult {
  std::vector<double> per_action_f1;
  double mf1 = 0.0;
  double threshold = 0.5;
  std::vector<ActionCounts> counts;
  std::vector<std::string> warnings;
};

// Counts per action with prediction = sigmoid(logit) >= threshold.
std::vector<ActionCounts> confusion_counts(const torch::Tensor& logits, const torch::Tensor& labels,
                                           double threshold);
EvalResult eval_from_counts(std::vector<ActionCounts> counts, double threshold);
EvalResult f1_scores(const torch::Tensor& logits, const torch::Tensor& labels, double threshold = 0.5);

std::string eval_result_to_json(const EvalResult& result);
EvalResult eval_result_from_json(const std::string& text);

// ---------------------------------------------------------------------------
// Table-1 style reports

struct ReportRow {
  std::string source;  // "run" for measured rows, "paper" for reference rows
  std::string model;
  std::optional<std::int64_t> num_concepts;
  std::array<double, 4> f1{};  // F, S, R, L
  double mf1 = 0.0;
};

struct ReportEntry {
  std::string model;
  EvalResult result;
  std::optional<std::int64_t> num_concepts;
};

struct ReportTable {
  std::vector<ReportRow> rows;

  std::string text() const;
  std::string csv() const;
};

// Published BDD-OIA scores for vanilla, CBM, M-SENN and C-SENN.
std::vector<ReportRow> reference_rows();

ReportTable report(const std::vector<ReportEntry>& entries, bool include_reference);
ReportTable parse_report_csv(const std::string& csv);

// Rounds to three decimals and drops trailing zeros (keeping one decimal).
std::string format_metric(double value);

}  // namespace csenn
