#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sicr/eval/protocol.hpp"
#include "sicr/io/config_json.hpp"
#include "sicr/signal/cohort.hpp"
#include "sicr/train/trainer.hpp"

namespace sicr::cli {

enum ExitCode { kOk = 0, kOtherError = 1, kConfigError = 2, kProtocolError = 3, kNumericError = 4 };

// Everything a command needs; written as config.json next to its outputs.
struct RunConfig {
  std::uint64_t seed = 0;  // master seed; copied into cohort.seed and train.seed
  std::string out = "out";
  eval::Scenario scenario = eval::Scenario::II;
  std::string baseline = "none";  // eval only: none | csp
  signal::CohortSpec cohort;
  train::TrainConfig train;
};

io::Json to_json(const RunConfig& c);

// Strict merge. A top-level "seed" is applied to cohort and train first, so
// explicit nested seeds in the same document still win.
void merge(const io::Json& j, RunConfig& c);

// "a.b.c=value" against the document; the path must already exist. Values
// are parsed as JSON when possible, otherwise taken as strings.
void apply_override(io::Json& doc, const std::string& assignment);

// Entry point behind the `sicr` binary. argv[0] is skipped.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sicr::cli
