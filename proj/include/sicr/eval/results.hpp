#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace sicr::eval {

// One accuracy measurement: a subject's test trials under one plan.
struct ResultRow {
  std::string scenario;  // "I" | "II"
  std::string backbone;  // "eegnet" | "deepconvnet" | "csp"
  std::string variant;   // "I".."IV", "pooled", or "-" for CSP
  std::uint16_t subject_id = 0;
  std::size_t fold = 0;  // Scenario I fold; 0 under Scenario II
  double accuracy = 0;   // fraction in [0, 1]
};

struct ResultTable {
  std::vector<ResultRow> rows;
  std::vector<std::uint16_t> subjects;   // ascending
  std::vector<double> subject_accuracy;  // per subject, mean over its folds
  std::vector<std::size_t> folds;        // ascending
  std::vector<double> fold_accuracy;     // per fold, mean over subjects
  double mean = 0;                       // over subjects
  double std = 0;                        // population std over subjects
};

// Throws ConfigError on empty input.
ResultTable aggregate(std::vector<ResultRow> rows);

// scenario,backbone,variant,subject_id,fold,accuracy with round-trip
// precision, so aggregate(read_results_csv(csv)) reproduces the table.
void write_results_csv(std::ostream& out, const ResultTable& table);
std::vector<ResultRow> read_results_csv(std::istream& in);

// {"rows": [...], "summary": {mean, std, subjects, folds}}
void write_results_json(std::ostream& out, const ResultTable& table);

}  // namespace sicr::eval
