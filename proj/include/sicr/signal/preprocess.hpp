#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "sicr/signal/filters.hpp"
#include "sicr/signal/trial.hpp"

namespace sicr::signal {

// Prototype order of the zero-phase bandpass (the digital filter has twice
// as many poles, and filtfilt squares the magnitude response).
constexpr std::size_t kBandpassOrder = 6;
constexpr std::size_t kAntiAliasOrder = 8;
// Anti-alias cutoff as a fraction of the target Nyquist frequency.
constexpr double kAntiAliasFraction = 0.7;

Trial bandpass(const Trial& trial, double low_hz = 4.0, double high_hz = 40.0);

using NeighborMap = std::map<std::size_t, std::vector<std::size_t>>;

// Channels without an entry pass through unchanged.
Trial laplacian_reference(const Trial& trial, const NeighborMap& neighbors);

// Channels on a ring: neighbours are the channels within `distance` steps on
// either side.
NeighborMap ring_neighbors(std::size_t n_channels, std::size_t distance = 2);

// `record` holds rest_s seconds of rest followed by task_s seconds of task.
Trial segment_baseline(const Trial& record, double rest_s, double task_s, double trim_s = 0.5);

Trial downsample(const Trial& trial, double target_rate);

}  // namespace sicr::signal
