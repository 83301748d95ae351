#include "sicr/eval/results.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "sicr/errors.hpp"

namespace sicr::eval {

ResultTable aggregate(std::vector<ResultRow> rows) {
  if (rows.empty()) throw ConfigError("cannot aggregate an empty result set");
  ResultTable t;
  std::map<std::uint16_t, std::pair<double, std::size_t>> by_subject;
  std::map<std::size_t, std::pair<double, std::size_t>> by_fold;
  for (const auto& r : rows) {
    auto& s = by_subject[r.subject_id];
    s.first += r.accuracy;
    ++s.second;
    auto& f = by_fold[r.fold];
    f.first += r.accuracy;
    ++f.second;
  }
  for (const auto& [id, acc] : by_subject) {
    t.subjects.push_back(id);
    t.subject_accuracy.push_back(acc.first / double(acc.second));
  }
  for (const auto& [fold, acc] : by_fold) {
    t.folds.push_back(fold);
    t.fold_accuracy.push_back(acc.first / double(acc.second));
  }
  const double n = double(t.subject_accuracy.size());
  for (double a : t.subject_accuracy) t.mean += a;
  t.mean /= n;
  double ss = 0;
  for (double a : t.subject_accuracy) ss += (a - t.mean) * (a - t.mean);
  t.std = std::sqrt(ss / n);
  t.rows = std::move(rows);
  return t;
}

void write_results_csv(std::ostream& out, const ResultTable& table) {
  out << "scenario,backbone,variant,subject_id,fold,accuracy\n";
  std::ostringstream num;
  num.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : table.rows) {
    num.str("");
    num << r.accuracy;
    out << r.scenario << ',' << r.backbone << ',' << r.variant << ',' << r.subject_id << ',' << r.fold
        << ',' << num.str() << '\n';
  }
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "scenario,backbone,variant,subject_id,fold,accuracy") {
    throw ConfigError("results CSV: unexpected header");
  }
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw ConfigError("results CSV: expected 6 columns in '" + line + "'");
    try {
      rows.push_back({cells[0], cells[1], cells[2], static_cast<std::uint16_t>(std::stoul(cells[3])),
                      std::stoul(cells[4]), std::stod(cells[5])});
    } catch (const std::logic_error&) {
      throw ConfigError("results CSV: bad number in '" + line + "'");
    }
  }
  return rows;
}

void write_results_json(std::ostream& out, const ResultTable& table) {
  using Json = nlohmann::ordered_json;
  Json rows = Json::array();
  for (const auto& r : table.rows) {
    rows.push_back({{"scenario", r.scenario},
                    {"backbone", r.backbone},
                    {"variant", r.variant},
                    {"subject_id", r.subject_id},
                    {"fold", r.fold},
                    {"accuracy", r.accuracy}});
  }
  Json subjects = Json::array();
  for (std::size_t i = 0; i < table.subjects.size(); ++i) {
    subjects.push_back({{"subject_id", table.subjects[i]}, {"accuracy", table.subject_accuracy[i]}});
  }
  Json folds = Json::array();
  for (std::size_t i = 0; i < table.folds.size(); ++i) {
    folds.push_back({{"fold", table.folds[i]}, {"accuracy", table.fold_accuracy[i]}});
  }
  Json doc{{"rows", rows},
           {"summary", {{"mean", table.mean}, {"std", table.std}, {"subjects", subjects}, {"folds", folds}}}};
  out << doc.dump(2) << '\n';
}

}  // namespace sicr::eval
