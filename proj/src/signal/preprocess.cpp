#include "sicr/signal/preprocess.hpp"

#include <cmath>
#include <set>
#include <string>

#include "sicr/errors.hpp"

namespace sicr::signal {

namespace {

std::vector<double> channel(const Trial& t, std::size_t c) {
  return std::vector<double>(t.x.begin() + std::ptrdiff_t(c * t.n_times),
                             t.x.begin() + std::ptrdiff_t((c + 1) * t.n_times));
}

std::size_t whole_samples(double seconds, double rate, const char* what) {
  double n = seconds * rate;
  if (std::abs(n - std::round(n)) > 1e-6) {
    throw ConfigError(std::string(what) + " is not a whole number of samples");
  }
  return std::size_t(std::llround(n));
}

}  // namespace

Trial bandpass(const Trial& trial, double low_hz, double high_hz) {
  auto sos = butterworth_bandpass(kBandpassOrder, low_hz, high_hz, trial.sample_rate);
  std::vector<float> out(trial.x.size());
  for (std::size_t c = 0; c < trial.n_channels; ++c) {
    auto y = sosfiltfilt(sos, channel(trial, c));
    std::copy(y.begin(), y.end(), out.begin() + std::ptrdiff_t(c * trial.n_times));
  }
  return with_samples(trial, trial.n_channels, trial.n_times, trial.sample_rate, std::move(out));
}

Trial laplacian_reference(const Trial& trial, const NeighborMap& neighbors) {
  Trial out = trial;
  for (const auto& [c, nb] : neighbors) {
    if (c >= trial.n_channels) throw ConfigError("laplacian: channel index out of range");
    if (nb.empty()) throw ConfigError("laplacian: channel " + std::to_string(c) + " has no neighbors");
    for (auto j : nb) {
      if (j >= trial.n_channels) throw ConfigError("laplacian: neighbor index out of range");
    }
    for (std::size_t t = 0; t < trial.n_times; ++t) {
      double m = 0;
      for (auto j : nb) m += trial.at(j, t);
      out.at(c, t) = float(double(trial.at(c, t)) - m / double(nb.size()));
    }
  }
  return out;
}

NeighborMap ring_neighbors(std::size_t n_channels, std::size_t distance) {
  if (n_channels < 2 || distance == 0) throw ConfigError("ring needs >= 2 channels and distance >= 1");
  NeighborMap map;
  for (std::size_t c = 0; c < n_channels; ++c) {
    std::set<std::size_t> nb;
    for (std::size_t d = 1; d <= distance; ++d) {
      nb.insert((c + d) % n_channels);
      nb.insert((c + n_channels - d % n_channels) % n_channels);
    }
    nb.erase(c);
    map[c] = std::vector<std::size_t>(nb.begin(), nb.end());
  }
  return map;
}

Trial segment_baseline(const Trial& record, double rest_s, double task_s, double trim_s) {
  if (task_s <= 2 * trim_s) throw ConfigError("task segment must be longer than twice the trim");
  const double fs = record.sample_rate;
  std::size_t rest = whole_samples(rest_s, fs, "rest length");
  std::size_t task = whole_samples(task_s, fs, "task length");
  std::size_t trim = whole_samples(trim_s, fs, "trim");
  if (rest == 0) throw ConfigError("baseline needs a non-empty rest segment");
  if (rest + task > record.n_times) throw ConfigError("record shorter than rest + task");

  std::size_t n = task - 2 * trim;
  std::vector<float> out(record.n_channels * n);
  for (std::size_t c = 0; c < record.n_channels; ++c) {
    double base = 0;
    for (std::size_t t = 0; t < rest; ++t) base += record.at(c, t);
    base /= double(rest);
    for (std::size_t t = 0; t < n; ++t) {
      out[c * n + t] = float(double(record.at(c, rest + trim + t)) - base);
    }
  }
  return with_samples(record, record.n_channels, n, fs, std::move(out));
}

Trial downsample(const Trial& trial, double target_rate) {
  const double fs = trial.sample_rate;
  if (!(target_rate > 0) || target_rate > fs) throw ConfigError("target rate must lie in (0, source]");
  double ratio = fs / target_rate;
  if (std::abs(ratio - std::round(ratio)) > 1e-9) {
    throw ConfigError("downsample needs an integer decimation factor");
  }
  std::size_t factor = std::size_t(std::llround(ratio));
  if (factor == 1) return trial;

  auto sos = butterworth_lowpass(kAntiAliasOrder, kAntiAliasFraction * target_rate / 2, fs);
  std::size_t n = trial.n_times / factor;
  std::vector<float> out(trial.n_channels * n);
  for (std::size_t c = 0; c < trial.n_channels; ++c) {
    auto y = sosfiltfilt(sos, channel(trial, c));
    for (std::size_t t = 0; t < n; ++t) out[c * n + t] = float(y[t * factor]);
  }
  return with_samples(trial, trial.n_channels, n, target_rate, std::move(out));
}

}  // namespace sicr::signal
