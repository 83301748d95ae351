#pragma once

#include <cstddef>
#include <vector>

#include "sicr/signal/trial.hpp"

namespace sicr::signal {

struct PSD {
  std::vector<double> frequencies;         // 0 .. Nyquist, step fs / segment
  std::vector<std::vector<double>> power;  // [channel][bin], power / Hz
};

// Hann-windowed, mean-detrended, one-sided density estimate.
PSD welch_psd(const Trial& trial, std::size_t segment_len, double overlap = 0.5);

// Mean of power over bins with low <= f <= high.
double band_power(const PSD& psd, std::size_t channel, double low_hz, double high_hz);

}  // namespace sicr::signal
