#include "sicr/diff/parameter.hpp"

#include <cmath>

namespace sicr::diff {

template <typename Real>
Tensor<Real> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                            std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  std::vector<Real> v(shape_volume(shape));
  for (auto& x : v) x = Real(u(rng));
  return Tensor<Real>::from(std::move(shape), std::move(v), true);
}

template Tensor<float> glorot_uniform(Shape, std::size_t, std::size_t, std::mt19937_64&);
template Tensor<double> glorot_uniform(Shape, std::size_t, std::size_t, std::mt19937_64&);

}  // namespace sicr::diff
