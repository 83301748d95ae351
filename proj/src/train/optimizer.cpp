#include "sicr/train/optimizer.hpp"

#include <cmath>

#include "sicr/errors.hpp"

namespace sicr::train {

template <typename Real>
void optimizer_step(const std::vector<diff::Parameter<Real>*>& params, OptimizerState& state,
                    double lr, const RAdamConfig& cfg) {
  for (const auto* p : params) {
    for (Real g : p->tensor.grad()) {
      if (!std::isfinite(double(g))) throw NumericError("non-finite gradient in parameter " + p->name);
    }
  }
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->tensor.size(), 0.0);
      state.v.emplace_back(p->tensor.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("optimizer state does not match parameters");

  const std::size_t t = ++state.step;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double b1t = std::pow(b1, double(t)), b2t = std::pow(b2, double(t));
  const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
  const double rho = rho_inf - 2.0 * double(t) * b2t / (1.0 - b2t);
  state.rho = rho;
  state.rectified = rho > 4.0;
  double r = 0;
  if (state.rectified) {
    r = std::sqrt((rho - 4) * (rho - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho));
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& tensor = params[i]->tensor;
    if (!tensor.has_grad()) continue;
    auto g = tensor.grad();
    auto w = tensor.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != w.size()) throw ContractError("optimizer buffer size mismatch for " + params[i]->name);
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = double(g[k]);
      m[k] = b1 * m[k] + (1 - b1) * gk;
      v[k] = b2 * v[k] + (1 - b2) * gk * gk;
      const double m_hat = m[k] / (1 - b1t);
      double update;
      if (state.rectified) {
        const double v_hat = std::sqrt(v[k] / (1 - b2t));
        update = r * m_hat / (v_hat + cfg.eps);
      } else {
        update = m_hat;
      }
      w[k] = Real(double(w[k]) - lr * update);
    }
  }
}

double lr_at_epoch(double base, double decay, std::size_t epoch) {
  return base * std::pow(decay, double(epoch));
}

template void optimizer_step(const std::vector<diff::Parameter<float>*>&, OptimizerState&, double,
                             const RAdamConfig&);
template void optimizer_step(const std::vector<diff::Parameter<double>*>&, OptimizerState&, double,
                             const RAdamConfig&);

}  // namespace sicr::train
