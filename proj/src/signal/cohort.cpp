#include "sicr/signal/cohort.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "sicr/errors.hpp"
#include "sicr/signal/fft.hpp"

namespace sicr::signal {

void CohortSpec::validate() const {
  if (n_channels < 2) throw ConfigError("cohort needs at least 2 channels");
  if (num_subjects < 1 || trials_per_class < 1) throw ConfigError("cohort needs subjects and trials");
  if (num_subjects > 65535) throw ConfigError("subject ids are 16-bit");
  if (!(sample_rate > 0) || double(n_times) < sample_rate) {
    throw ConfigError("trials must hold at least one second of signal");
  }
  if (!(band_low > 0 && band_low < band_high && band_high < sample_rate / 2)) {
    throw ConfigError("class band must lie inside (0, Nyquist)");
  }
  if (!(class_effect >= 0 && class_effect < 1)) throw ConfigError("class effect must lie in [0, 1)");
  const auto& n = nuisance;
  if (n.tilt_range < 0 || n.mixing_strength < 0 || n.noise_floor < 0 || n.noise_jitter < 0 ||
      n.noise_jitter >= 1) {
    throw ConfigError("nuisance parameters must be nonnegative (jitter below 1)");
  }
}

std::vector<std::size_t> lateral_group(std::size_t n_channels) {
  std::vector<std::size_t> group;
  for (std::size_t c = 0; c < n_channels; ++c) {
    if (std::cos(2 * std::numbers::pi * double(c) / double(n_channels)) <= -0.5 + 1e-12) {
      group.push_back(c);
    }
  }
  return group;
}

namespace {

struct SubjectShift {
  double tilt = 0;
  std::vector<double> mixing;  // n_c x n_c row-major
  double noise_sigma = 0;
};

void normalize_std(std::vector<double>& v) {
  double mean = 0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double ss = 0;
  for (double& x : v) {
    x -= mean;
    ss += x * x;
  }
  double sd = std::sqrt(ss / double(v.size()));
  if (sd > 0) {
    for (double& x : v) x /= sd;
  }
}

// White Gaussian noise shaped in the frequency domain by `gain(k)`, then
// scaled to unit standard deviation.
template <typename Gain>
std::vector<double> shaped_noise(RealFft& fft, std::mt19937_64& rng, Gain gain) {
  std::normal_distribution<double> normal;
  std::vector<double> white(fft.size());
  for (auto& w : white) w = normal(rng);
  auto spec = fft.forward(white);
  for (std::size_t k = 0; k < spec.size(); ++k) spec[k] *= gain(k);
  auto out = fft.inverse(spec);
  normalize_std(out);
  return out;
}

SubjectShift draw_shift(const CohortSpec& spec, std::mt19937_64& rng) {
  const auto& n = spec.nuisance;
  const std::size_t nc = spec.n_channels;
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  std::normal_distribution<double> normal;
  SubjectShift s;
  s.tilt = n.tilt_range * sym(rng);
  s.mixing.assign(nc * nc, 0.0);
  for (std::size_t i = 0; i < nc; ++i) {
    for (std::size_t j = 0; j < nc; ++j) {
      s.mixing[i * nc + j] = (i == j ? 1.0 : 0.0) + n.mixing_strength * normal(rng) / std::sqrt(double(nc));
    }
  }
  s.noise_sigma = n.noise_floor * (1.0 + n.noise_jitter * sym(rng));
  return s;
}

}  // namespace

std::vector<Trial> generate_cohort(const CohortSpec& spec) {
  spec.validate();
  const std::size_t nc = spec.n_channels;
  const std::size_t nt = spec.n_times;
  const double df = spec.sample_rate / double(nt);
  std::vector<bool> in_group(nc, false);
  for (auto c : lateral_group(nc)) in_group[c] = true;

  RealFft fft(nt);
  std::vector<Trial> trials;
  trials.reserve(spec.num_subjects * 2 * spec.trials_per_class);

  for (std::size_t subject = 0; subject < spec.num_subjects; ++subject) {
    std::seed_seq seq{std::uint64_t(spec.seed), std::uint64_t(subject), std::uint64_t(0x5eed)};
    std::mt19937_64 rng(seq);
    SubjectShift shift = draw_shift(spec, rng);
    const double exponent = (1.0 + shift.tilt) / 2.0;  // amplitude ~ f^{-(1+tilt)/2}
    auto background_gain = [&](std::size_t k) {
      return k == 0 ? 0.0 : std::pow(double(k) * df, -exponent);
    };
    auto band_gain = [&](std::size_t k) {
      double f = double(k) * df;
      return (f >= spec.band_low && f <= spec.band_high) ? 1.0 : 0.0;
    };
    std::normal_distribution<double> normal;

    for (std::size_t i = 0; i < 2 * spec.trials_per_class; ++i) {
      int label = int(i % 2);
      double amp = label == 0 ? 1.0 - spec.class_effect : 1.0 + spec.class_effect;
      std::vector<std::vector<double>> sources(nc);
      for (std::size_t c = 0; c < nc; ++c) {
        auto bg = shaped_noise(fft, rng, background_gain);
        auto osc = shaped_noise(fft, rng, band_gain);
        double a = in_group[c] ? amp : 1.0;
        for (std::size_t t = 0; t < nt; ++t) bg[t] += a * osc[t];
        sources[c] = std::move(bg);
      }
      Trial trial;
      trial.n_channels = nc;
      trial.n_times = nt;
      trial.sample_rate = spec.sample_rate;
      trial.label = label;
      trial.subject = std::uint16_t(subject);
      trial.x.resize(nc * nt);
      for (std::size_t r = 0; r < nc; ++r) {
        for (std::size_t t = 0; t < nt; ++t) {
          double v = 0;
          for (std::size_t c = 0; c < nc; ++c) v += shift.mixing[r * nc + c] * sources[c][t];
          trial.x[r * nt + t] = float(v + shift.noise_sigma * normal(rng));
        }
      }
      trials.push_back(std::move(trial));
    }
  }
  return trials;
}

}  // namespace sicr::signal
