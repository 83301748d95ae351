#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace sicr::signal {

// One labeled multi-channel recording. Samples are row-major [channel][time].
struct Trial {
  std::size_t n_channels = 0;
  std::size_t n_times = 0;
  double sample_rate = 0.0;
  std::vector<float> x;
  int label = 0;  // index into the two classes
  std::uint16_t subject = 0;

  float at(std::size_t c, std::size_t t) const { return x[c * n_times + t]; }
  float& at(std::size_t c, std::size_t t) { return x[c * n_times + t]; }
  std::array<float, 2> one_hot() const;

  // Throws ConfigError when n_c < 2, n_t < sample_rate, the label is not
  // binary, or the sample buffer has the wrong length.
  void validate() const;
};

// Same metadata, new samples.
Trial with_samples(const Trial& like, std::size_t n_channels, std::size_t n_times,
                   double sample_rate, std::vector<float> x);

}  // namespace sicr::signal
