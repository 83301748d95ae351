#include "sicr/signal/trial.hpp"

#include <string>

#include "sicr/errors.hpp"

namespace sicr::signal {

std::array<float, 2> Trial::one_hot() const {
  std::array<float, 2> y{0.0f, 0.0f};
  y[static_cast<std::size_t>(label)] = 1.0f;
  return y;
}

void Trial::validate() const {
  if (n_channels < 2) throw ConfigError("trial needs at least 2 channels");
  if (double(n_times) < sample_rate) {
    throw ConfigError("trial shorter than one second (" + std::to_string(n_times) + " samples at " +
                      std::to_string(sample_rate) + " Hz)");
  }
  if (label != 0 && label != 1) throw ConfigError("trial label must be 0 or 1");
  if (x.size() != n_channels * n_times) throw ConfigError("trial sample buffer has wrong length");
}

Trial with_samples(const Trial& like, std::size_t n_channels, std::size_t n_times,
                   double sample_rate, std::vector<float> x) {
  Trial t;
  t.n_channels = n_channels;
  t.n_times = n_times;
  t.sample_rate = sample_rate;
  t.x = std::move(x);
  t.label = like.label;
  t.subject = like.subject;
  return t;
}

}  // namespace sicr::signal
