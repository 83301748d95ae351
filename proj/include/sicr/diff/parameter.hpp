#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "sicr/diff/tensor.hpp"

namespace sicr::diff {

template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> tensor;
  Real l2_coefficient = Real(0);
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
template <typename Real>
Tensor<Real> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                            std::mt19937_64& rng);

}  // namespace sicr::diff
