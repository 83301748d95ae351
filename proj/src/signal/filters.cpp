#include "sicr/signal/filters.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "sicr/errors.hpp"

namespace sicr::signal {

namespace {

using cplx = std::complex<double>;

// Left-half-plane poles of the normalized analog Butterworth prototype.
std::vector<cplx> prototype_poles(std::size_t order) {
  std::vector<cplx> poles;
  for (std::size_t k = 0; k < order; ++k) {
    double theta = std::numbers::pi * double(2 * k + order + 1) / double(2 * order);
    poles.push_back(std::polar(1.0, theta));
  }
  return poles;
}

double prewarp(double f, double fs) { return 2.0 * fs * std::tan(std::numbers::pi * f / fs); }

cplx bilinear(cplx s, double fs) { return (2.0 * fs + s) / (2.0 * fs - s); }

// Groups digital poles into second-order denominators: conjugate pairs first,
// leftover real poles two at a time.
std::vector<std::pair<double, double>> pair_poles(const std::vector<cplx>& poles) {
  std::vector<std::pair<double, double>> dens;
  std::vector<double> reals;
  for (const auto& p : poles) {
    if (std::abs(p.imag()) < 1e-12 * std::max(1.0, std::abs(p))) {
      reals.push_back(p.real());
    } else if (p.imag() > 0) {
      dens.emplace_back(-2.0 * p.real(), std::norm(p));
    }
  }
  std::sort(reals.begin(), reals.end());
  for (std::size_t i = 0; i + 1 < reals.size(); i += 2) {
    dens.emplace_back(-(reals[i] + reals[i + 1]), reals[i] * reals[i + 1]);
  }
  if (reals.size() % 2 == 1) throw ConfigError("filter design produced an unpaired real pole");
  return dens;
}

cplx section_response(const Biquad& s, cplx z_inv) {
  cplx num = s.b0 + z_inv * (s.b1 + z_inv * s.b2);
  cplx den = 1.0 + z_inv * (s.a1 + z_inv * s.a2);
  return num / den;
}

void check_order(std::size_t order) {
  if (order == 0 || order % 2 != 0) throw ConfigError("Butterworth order must be even and positive");
}

}  // namespace

SosFilter butterworth_lowpass(std::size_t order, double cutoff_hz, double sample_rate) {
  check_order(order);
  if (!(cutoff_hz > 0 && cutoff_hz < sample_rate / 2)) {
    throw ConfigError("lowpass cutoff must lie in (0, Nyquist)");
  }
  double wc = prewarp(cutoff_hz, sample_rate);
  std::vector<cplx> digital;
  for (const auto& p : prototype_poles(order)) digital.push_back(bilinear(p * wc, sample_rate));
  SosFilter sos;
  for (auto [a1, a2] : pair_poles(digital)) {
    Biquad s;
    s.a1 = a1;
    s.a2 = a2;
    double g = (1.0 + a1 + a2) / 4.0;  // unit DC gain
    s.b0 = g;
    s.b1 = 2 * g;
    s.b2 = g;
    sos.push_back(s);
  }
  return sos;
}

SosFilter butterworth_bandpass(std::size_t order, double low_hz, double high_hz,
                               double sample_rate) {
  check_order(order);
  if (!(low_hz > 0 && low_hz < high_hz && high_hz < sample_rate / 2)) {
    throw ConfigError("bandpass edges must satisfy 0 < low < high < Nyquist");
  }
  double w1 = prewarp(low_hz, sample_rate);
  double w2 = prewarp(high_hz, sample_rate);
  double w0 = std::sqrt(w1 * w2);
  double bw = w2 - w1;
  std::vector<cplx> digital;
  for (const auto& p : prototype_poles(order)) {
    cplx half = p * bw / 2.0;
    cplx root = std::sqrt(half * half - w0 * w0);
    digital.push_back(bilinear(half + root, sample_rate));
    digital.push_back(bilinear(half - root, sample_rate));
  }
  SosFilter sos;
  for (auto [a1, a2] : pair_poles(digital)) {
    Biquad s;
    s.b0 = 1;
    s.b1 = 0;
    s.b2 = -1;
    s.a1 = a1;
    s.a2 = a2;
    sos.push_back(s);
  }
  // Unit gain at the digital image of the geometric centre frequency.
  double centre = 2.0 * std::atan(w0 / (2.0 * sample_rate));
  cplx z_inv = std::polar(1.0, -centre);
  for (auto& s : sos) {
    double g = 1.0 / std::abs(section_response(s, z_inv));
    s.b0 *= g;
    s.b2 *= g;
  }
  return sos;
}

double magnitude_response(const SosFilter& sos, double freq_hz, double sample_rate) {
  cplx z_inv = std::polar(1.0, -2.0 * std::numbers::pi * freq_hz / sample_rate);
  cplx h = 1.0;
  for (const auto& s : sos) h *= section_response(s, z_inv);
  return std::abs(h);
}

namespace {

// Transposed direct form II, state per section (z1, z2).
std::vector<double> run_sos(const SosFilter& sos, const std::vector<double>& x,
                            std::vector<std::pair<double, double>> state) {
  std::vector<double> y = x;
  for (std::size_t k = 0; k < sos.size(); ++k) {
    const auto& s = sos[k];
    auto [z1, z2] = state[k];
    for (auto& v : y) {
      double in = v;
      double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
  return y;
}

// Step-response steady state of each section for a unit input to the cascade.
std::vector<std::pair<double, double>> steady_state(const SosFilter& sos) {
  std::vector<std::pair<double, double>> zi;
  double scale = 1.0;
  for (const auto& s : sos) {
    double gain = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    double y = gain;
    double z2 = s.b2 - s.a2 * y;
    double z1 = y - s.b0;
    zi.emplace_back(z1 * scale, z2 * scale);
    scale *= gain;
  }
  return zi;
}

std::vector<std::pair<double, double>> scaled(std::vector<std::pair<double, double>> zi, double by) {
  for (auto& [a, b] : zi) {
    a *= by;
    b *= by;
  }
  return zi;
}

}  // namespace

std::vector<double> sosfilt(const SosFilter& sos, const std::vector<double>& x) {
  return run_sos(sos, x, std::vector<std::pair<double, double>>(sos.size(), {0.0, 0.0}));
}

std::vector<double> sosfiltfilt(const SosFilter& sos, const std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n < 2) throw ConfigError("filtfilt needs at least 2 samples");
  std::size_t padlen = std::min<std::size_t>(3 * (2 * sos.size() + 1), n - 1);

  std::vector<double> ext;
  ext.reserve(n + 2 * padlen);
  for (std::size_t i = padlen; i >= 1; --i) ext.push_back(2 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= padlen; ++i) ext.push_back(2 * x[n - 1] - x[n - 1 - i]);

  auto zi = steady_state(sos);
  auto fwd = run_sos(sos, ext, scaled(zi, ext.front()));
  std::reverse(fwd.begin(), fwd.end());
  auto bwd = run_sos(sos, fwd, scaled(zi, fwd.front()));
  std::reverse(bwd.begin(), bwd.end());
  return std::vector<double>(bwd.begin() + std::ptrdiff_t(padlen),
                             bwd.begin() + std::ptrdiff_t(padlen + n));
}

}  // namespace sicr::signal
