#include "sicr/signal/welch.hpp"

#include <cmath>
#include <numbers>

#include "sicr/errors.hpp"
#include "sicr/signal/fft.hpp"

namespace sicr::signal {

PSD welch_psd(const Trial& trial, std::size_t segment_len, double overlap) {
  if (segment_len < 8) throw ConfigError("welch: segment length must be at least 8 samples");
  if (segment_len > trial.n_times) throw ConfigError("welch: segment longer than the trial");
  if (!(overlap >= 0 && overlap < 1)) throw ConfigError("welch: overlap must lie in [0, 1)");

  const std::size_t n = segment_len;
  std::size_t step = std::max<std::size_t>(1, n - std::size_t(std::llround(overlap * double(n))));
  std::size_t n_seg = (trial.n_times - n) / step + 1;

  std::vector<double> window(n);
  double wss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * double(i) / double(n));
    wss += window[i] * window[i];
  }
  const double scale = 1.0 / (trial.sample_rate * wss);

  RealFft fft(n);
  PSD psd;
  psd.frequencies.resize(fft.bins());
  for (std::size_t k = 0; k < fft.bins(); ++k) {
    psd.frequencies[k] = double(k) * trial.sample_rate / double(n);
  }
  psd.power.assign(trial.n_channels, std::vector<double>(fft.bins(), 0.0));

  std::vector<double> buf(n);
  for (std::size_t c = 0; c < trial.n_channels; ++c) {
    auto& p = psd.power[c];
    for (std::size_t s = 0; s < n_seg; ++s) {
      std::size_t start = s * step;
      double mean = 0;
      for (std::size_t i = 0; i < n; ++i) mean += trial.at(c, start + i);
      mean /= double(n);
      for (std::size_t i = 0; i < n; ++i) buf[i] = (trial.at(c, start + i) - mean) * window[i];
      auto spec = fft.forward(buf);
      for (std::size_t k = 0; k < spec.size(); ++k) p[k] += std::norm(spec[k]);
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
      bool edge = k == 0 || (n % 2 == 0 && k == p.size() - 1);
      p[k] *= scale / double(n_seg) * (edge ? 1.0 : 2.0);
    }
  }
  return psd;
}

double band_power(const PSD& psd, std::size_t channel, double low_hz, double high_hz) {
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < psd.frequencies.size(); ++k) {
    if (psd.frequencies[k] >= low_hz && psd.frequencies[k] <= high_hz) {
      sum += psd.power.at(channel)[k];
      ++count;
    }
  }
  if (count == 0) throw ConfigError("band_power: no bins inside the band");
  return sum / double(count);
}

}  // namespace sicr::signal
