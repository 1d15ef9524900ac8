#pragma once

// Text outputs: history.csv, sweep.csv and the gradcheck table. Accuracies are
// percentages with 2 decimals; CSV fields are quoted per RFC 4180 when needed.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "scnn/autograd.hpp"
#include "scnn/optimize.hpp"

namespace scnn {

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string format_percent(double fraction) { return format_fixed(100.0 * fraction, 2); }

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

struct HistoryRow {
  std::size_t iteration = 0;
  std::optional<double> mean_loss;  // empty for the untrained row at iteration 0
  std::optional<double> test_accuracy;
};

// One row per log_interval multiple, per evaluated iteration and for the last
// iteration. mean_loss averages the per-iteration losses since the previous row.
inline std::vector<HistoryRow> summarize_history(const std::vector<HistoryEntry>& history,
                                                 std::size_t log_interval) {
  std::vector<HistoryRow> rows;
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& e = history[i];
    sum += e.loss;
    ++count;
    const bool last = i + 1 == history.size();
    if ((log_interval && e.iteration % log_interval == 0) || e.test_accuracy || last) {
      rows.push_back({e.iteration, sum / static_cast<double>(count), e.test_accuracy});
      sum = 0;
      count = 0;
    }
  }
  return rows;
}

inline std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::ostringstream out;
  out << "iteration,mean_loss,test_accuracy\r\n";
  for (const auto& r : rows) {
    out << r.iteration << ',' << (r.mean_loss ? format_fixed(*r.mean_loss, 6) : "") << ','
        << (r.test_accuracy ? format_percent(*r.test_accuracy) : "") << "\r\n";
  }
  return out.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

struct SweepRow {
  std::string si;
  std::optional<double> accuracy;  // fraction; empty when the run failed
  std::string error;
};

// Rows sorted by SI in canonical binary order, the best accuracy flagged
// (every row tied for best is flagged).
inline std::string sweep_csv(std::vector<SweepRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) { return a.si < b.si; });
  std::optional<double> best;
  for (const auto& r : rows) {
    if (r.accuracy && (!best || *r.accuracy > *best)) best = r.accuracy;
  }
  std::ostringstream out;
  out << "si,accuracy,best,error\r\n";
  for (const auto& r : rows) {
    const bool is_best = r.accuracy && best && format_percent(*r.accuracy) == format_percent(*best);
    out << csv_field(r.si) << ',' << (r.accuracy ? format_percent(*r.accuracy) : "") << ','
        << (is_best ? "*" : "") << ',' << csv_field(r.error) << "\r\n";
  }
  return out.str();
}

inline std::string gradcheck_table(const std::string& label, const GradCheckReport& report, double threshold) {
  std::ostringstream out;
  char line[160];
  out << label << '\n';
  std::snprintf(line, sizeof line, "  %-16s %8s %12s %12s %s\n", "group", "count", "max_rel", "mean_rel", "status");
  out << line;
  for (const auto& g : report.groups) {
    const char* status = g.max_rel <= threshold ? "ok" : "FAIL";
    if (g.dead()) status = "dead";
    std::snprintf(line, sizeof line, "  %-16s %8zu %12.3e %12.3e %s\n", g.name.c_str(), g.count, g.max_rel,
                  g.mean_rel, status);
    out << line;
  }
  std::snprintf(line, sizeof line, "  overall max_rel=%.3e mean_rel=%.3e reseeds=%zu%s -> %s\n", report.max_rel,
                report.mean_rel, report.reseeds, report.kinks_unresolved ? " (kinks unresolved)" : "",
                report.passed(threshold) ? "PASS" : "FAIL");
  out << line;
  return out.str();
}

}  // namespace scnn
