#pragma once

#include <cstddef>
#include <vector>

#include "sicr/diff/parameter.hpp"

namespace sicr::train {

struct RAdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  std::vector<std::vector<double>> m;  // first moments, one per parameter
  std::vector<std::vector<double>> v;  // second moments
  std::size_t step = 0;
  double rho = 0;           // rho_t of the last step
  bool rectified = false;   // whether the last step used the adaptive update
};

// One rectified-Adam step over `params` using their current gradients.
// Parameters without a gradient buffer are left untouched (their moments are
// not advanced either). A non-finite gradient throws NumericError naming the
// parameter before anything is modified.
template <typename Real>
void optimizer_step(const std::vector<diff::Parameter<Real>*>& params, OptimizerState& state,
                    double lr, const RAdamConfig& config = {});

// base * decay^epoch
double lr_at_epoch(double base, double decay, std::size_t epoch);

}  // namespace sicr::train
