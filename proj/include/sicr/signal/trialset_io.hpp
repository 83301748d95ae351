#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "sicr/signal/trial.hpp"

namespace sicr::signal {

struct TrialSet {
  std::vector<std::string> class_names{"left", "right"};
  std::vector<Trial> trials;
};

// TRIALSET v1: one JSON header line, then per trial n_c*n_t little-endian
// float32 samples, a class byte and a little-endian uint16 subject id.
void write_trialset(std::ostream& out, const TrialSet& set);
TrialSet read_trialset(std::istream& in);

void save_trialset(const std::string& path, const TrialSet& set);
TrialSet load_trialset(const std::string& path);

}  // namespace sicr::signal
