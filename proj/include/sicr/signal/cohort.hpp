#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sicr/signal/trial.hpp"

namespace sicr::signal {

// Per-subject domain shift. All zero: every subject draws from the same
// distribution.
struct NuisanceSpec {
  double tilt_range = 0.6;       // spectral exponent offset drawn from U(-r, r)
  double mixing_strength = 0.5;  // A_s = I + strength * G / sqrt(n_c), G ~ N(0, 1)
  double noise_floor = 0.3;      // sensor noise std before jitter
  double noise_jitter = 0.5;     // sigma_s = floor * (1 + jitter * U(-1, 1))
};

struct CohortSpec {
  std::size_t num_subjects = 8;
  std::size_t trials_per_class = 60;
  std::size_t n_channels = 8;
  std::size_t n_times = 128;
  double sample_rate = 64.0;
  double band_low = 8.0;
  double band_high = 13.0;
  // Class 0 scales the band oscillation on the lateral group by (1 - effect),
  // class 1 by (1 + effect).
  double class_effect = 0.3;
  NuisanceSpec nuisance;
  std::uint64_t seed = 0;

  void validate() const;
};

// Channels sit on a ring at angle 2 pi c / n_c; the lateral group is the arc
// with cos(angle) <= -1/2.
std::vector<std::size_t> lateral_group(std::size_t n_channels);

// Subjects in order, classes alternating within a subject.
std::vector<Trial> generate_cohort(const CohortSpec& spec);

}  // namespace sicr::signal
