#include "csenn/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>

#include "csenn/common.hpp"
#include "json.hpp"

namespace csenn {

double ActionCounts::precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp); }

double ActionCounts::recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn); }

double ActionCounts::f1() const {
  if (degenerate()) return 0.0;
  return 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
}

std::vector<ActionCounts> confusion_counts(const torch::Tensor& logits, const torch::Tensor& labels,
                                           double threshold) {
  if (logits.dim() != 2 || logits.sizes() != labels.sizes())
    throw ShapeError("f1_scores: logits and labels must both be N x k");
  if (logits.size(0) < 1) throw ShapeError("f1_scores: need at least one sample");
  auto probs = torch::sigmoid(logits.detach().to(torch::kDouble)).contiguous();
  auto truth = labels.detach().to(torch::kDouble).contiguous();
  auto p = probs.accessor<double, 2>();
  auto t = truth.accessor<double, 2>();
  std::vector<ActionCounts> counts(static_cast<std::size_t>(logits.size(1)));
  for (std::int64_t i = 0; i < logits.size(0); ++i)
    for (std::int64_t j = 0; j < logits.size(1); ++j) {
      const bool pred = p[i][j] >= threshold;
      const bool pos = t[i][j] > 0.5;
      auto& c = counts[static_cast<std::size_t>(j)];
      if (pred && pos) ++c.tp;
      else if (pred) ++c.fp;
      else if (pos) ++c.fn;
      else ++c.tn;
    }
  return counts;
}

EvalResult eval_from_counts(std::vector<ActionCounts> counts, double threshold) {
  EvalResult r;
  r.threshold = threshold;
  double sum = 0.0;
  for (std::size_t j = 0; j < counts.size(); ++j) {
    const double f = counts[j].f1();
    if (counts[j].degenerate())
      r.warnings.push_back("action " + std::to_string(j) + " is neither predicted nor present; F1 set to 0");
    r.per_action_f1.push_back(f);
    sum += f;
  }
  r.mf1 = counts.empty() ? 0.0 : sum / static_cast<double>(counts.size());
  r.counts = std::move(counts);
  return r;
}

EvalResult f1_scores(const torch::Tensor& logits, const torch::Tensor& labels, double threshold) {
  return eval_from_counts(confusion_counts(logits, labels, threshold), threshold);
}

std::string eval_result_to_json(const EvalResult& r) {
  nlohmann::json j;
  j["per_action_f1"] = r.per_action_f1;
  j["mF1"] = r.mf1;
  j["threshold"] = r.threshold;
  auto counts = nlohmann::json::array();
  for (const auto& c : r.counts) counts.push_back({{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}});
  j["counts"] = counts;
  j["warnings"] = r.warnings;
  return j.dump(2);
}

EvalResult eval_result_from_json(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    EvalResult r;
    r.per_action_f1 = j.at("per_action_f1").get<std::vector<double>>();
    r.mf1 = j.at("mF1").get<double>();
    r.threshold = j.at("threshold").get<double>();
    for (const auto& c : j.at("counts"))
      r.counts.push_back({c.at("tp").get<std::int64_t>(), c.at("fp").get<std::int64_t>(),
                          c.at("fn").get<std::int64_t>(), c.at("tn").get<std::int64_t>()});
    r.warnings = j.value("warnings", std::vector<std::string>{});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("evaluation result: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

std::vector<ReportRow> reference_rows() {
  return {
      {"paper", "Vanilla", std::nullopt, {0.54, 0.666, 0.11, 0.151}, 0.367},
      {"paper", "CBM", std::nullopt, {0.795, 0.732, 0.431, 0.483}, 0.610},
      {"paper", "M-SENN", std::nullopt, {0.705, 0.727, 0.339, 0.385}, 0.539},
      {"paper", "C-SENN", std::nullopt, {0.772, 0.744, 0.486, 0.469}, 0.618},
  };
}

std::string format_metric(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", std::round(value * 1000.0) / 1000.0);
  std::string s = buf;
  while (s.size() > 1 && s.back() == '0' && s[s.size() - 2] != '.') s.pop_back();
  return s;
}

ReportTable report(const std::vector<ReportEntry>& entries, bool include_reference) {
  ReportTable table;
  for (const auto& e : entries) {
    if (e.result.per_action_f1.size() != 4)
      throw ShapeError("report: '" + e.model + "' does not have four per-action F1 scores");
    ReportRow row{"run", e.model, e.num_concepts, {}, e.result.mf1};
    for (std::size_t j = 0; j < 4; ++j) row.f1[j] = e.result.per_action_f1[j];
    table.rows.push_back(row);
  }
  if (include_reference)
    for (auto& r : reference_rows()) table.rows.push_back(r);
  return table;
}

std::string ReportTable::csv() const {
  std::ostringstream out;
  out << "source,model,D_c,F,S,R,L,mF1\n";
  for (const auto& r : rows) {
    out << r.source << ',' << r.model << ',';
    if (r.num_concepts) out << *r.num_concepts;
    for (double f : r.f1) out << ',' << format_metric(f);
    out << ',' << format_metric(r.mf1) << '\n';
  }
  return out.str();
}

std::string ReportTable::text() const {
  std::size_t name_width = 5;
  for (const auto& r : rows) {
    const auto label = r.source == "paper" ? r.model + " (paper)" : r.model;
    name_width = std::max(name_width, label.size());
  }
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(name_width)) << "Model" << " | " << std::setw(4) << "D_c";
  for (const char* h : {"F", "S", "R", "L"}) out << " | " << std::setw(6) << h;
  out << " | mF1\n";
  out << std::string(name_width + 7 + 4 * 9 + 6, '-') << '\n';
  for (const auto& r : rows) {
    const auto label = r.source == "paper" ? r.model + " (paper)" : r.model;
    out << std::setw(static_cast<int>(name_width)) << label << " | " << std::setw(4)
        << (r.num_concepts ? std::to_string(*r.num_concepts) : std::string());
    for (double f : r.f1) out << " | " << std::setw(6) << format_metric(f);
    out << " | " << format_metric(r.mf1) << '\n';
  }
  return out.str();
}

ReportTable parse_report_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "source,model,D_c,F,S,R,L,mF1")
    throw SchemaError("report CSV: unexpected header");
  ReportTable table;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 8) throw SchemaError("report CSV line " + std::to_string(line_no) + ": expected 8 cells");
    ReportRow row;
    row.source = cells[0];
    row.model = cells[1];
    try {
      if (!cells[2].empty()) row.num_concepts = std::stoll(cells[2]);
      for (std::size_t j = 0; j < 4; ++j) row.f1[j] = std::stod(cells[3 + j]);
      row.mf1 = std::stod(cells[7]);
    } catch (const std::exception&) {
      throw SchemaError("report CSV line " + std::to_string(line_no) + ": malformed number");
    }
    table.rows.push_back(row);
  }
  return table;
}

}  // namespace csenn
