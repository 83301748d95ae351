#pragma once

#include <cstddef>
#include <vector>

namespace sicr::signal {

// One biquad: H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2).
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;
};

using SosFilter = std::vector<Biquad>;

// Digital Butterworth designs via the bilinear transform with prewarping.
// `order` is the order of the analog lowpass prototype; a bandpass therefore
// has 2*order poles.
SosFilter butterworth_lowpass(std::size_t order, double cutoff_hz, double sample_rate);
SosFilter butterworth_bandpass(std::size_t order, double low_hz, double high_hz, double sample_rate);

// |H(e^{j 2 pi f / fs})|
double magnitude_response(const SosFilter& sos, double freq_hz, double sample_rate);

std::vector<double> sosfilt(const SosFilter& sos, const std::vector<double>& x);

// Zero-phase forward-backward filtering with odd-reflection padding and
// steady-state initial conditions.
std::vector<double> sosfiltfilt(const SosFilter& sos, const std::vector<double>& x);

}  // namespace sicr::signal
