#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "sicr/diff/ops.hpp"

namespace testutil {

using sicr::diff::Shape;
using T64 = sicr::diff::Tensor<double>;

inline T64 random_tensor(Shape shape, std::mt19937_64& rng, bool grad = true, double lo = -1.0,
                         double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(sicr::diff::shape_volume(shape));
  for (auto& x : v) x = u(rng);
  return T64::from(std::move(shape), std::move(v), grad);
}

inline std::vector<float> random_floats(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// |a - b| / max(|a|, |b|, floor), maximized over elements.
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b,
                            double floor = 1e-6) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double den = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / den);
  }
  return worst;
}

// Compares tape gradients of a scalar function against central differences
// for every tensor in `wrt`. Returns the worst relative error.
inline double gradient_check(const std::function<T64()>& loss_fn, std::vector<T64> wrt,
                             double step = 1e-5) {
  for (auto& t : wrt) t.zero_grad();
  {
    sicr::diff::Tape<double> tape;
    auto loss = loss_fn();
    tape.backward(loss);
  }
  double worst = 0;
  for (auto& t : wrt) {
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    std::vector<double> numeric(t.size());
    auto& v = t.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      double keep = v[i];
      v[i] = keep + step;
      double up = loss_fn().item();
      v[i] = keep - step;
      double down = loss_fn().item();
      v[i] = keep;
      numeric[i] = (up - down) / (2 * step);
    }
    worst = std::max(worst, max_rel_error(analytic, numeric));
  }
  return worst;
}

}  // namespace testutil
