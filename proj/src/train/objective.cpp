#include "sicr/train/objective.hpp"

#include <cmath>
#include <sstream>

#include "sicr/errors.hpp"

namespace sicr::train {

void LossWeights::validate() const {
  for (double v : {alpha, beta, gamma}) {
    if (!(v >= 0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and nonnegative");
  }
}

LossWeights LossWeights::parse(const std::string& text) {
  std::stringstream ss(text);
  std::vector<double> vals;
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      vals.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad loss weight '" + item + "'");
    }
  }
  if (vals.size() != 3) throw ConfigError("weights need three comma-separated values");
  LossWeights w{vals[0], vals[1], vals[2]};
  w.validate();
  return w;
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::I: return "I";
    case Variant::II: return "II";
    case Variant::III: return "III";
    case Variant::IV: return "IV";
  }
  return "?";
}

Variant parse_variant(const std::string& text) {
  if (text == "I") return Variant::I;
  if (text == "II") return Variant::II;
  if (text == "III") return Variant::III;
  if (text == "IV") return Variant::IV;
  throw ConfigError("unknown variant '" + text + "' (expected I|II|III|IV)");
}

ActiveLosses active_losses(Variant v, const LossWeights& w) {
  ActiveLosses a;
  a.dec = w.beta > 0;
  a.global = w.gamma > 0 && (v == Variant::II || v == Variant::IV);
  a.local = w.gamma > 0 && (v == Variant::III || v == Variant::IV);
  return a;
}

template <typename Real>
Tensor<Real> total_objective(const Tensor<Real>& l_cls, const Tensor<Real>& l_dec,
                             const Tensor<Real>& l_dim, const LossWeights& w) {
  w.validate();
  Tensor<Real> total;
  auto accumulate = [&](const Tensor<Real>& term, double weight) {
    if (!term.defined() || weight == 0) return;
    if (term.size() != 1) throw ContractError("objective terms must be scalar");
    auto scaled = diff::scale(term, Real(weight));
    total = total.defined() ? diff::add(total, scaled) : scaled;
  };
  accumulate(l_cls, w.alpha);
  accumulate(l_dec, w.beta);
  accumulate(l_dim, w.gamma);
  if (!total.defined()) total = Tensor<Real>::scalar(Real(0));
  return total;
}

template <typename Real>
Tensor<Real> l2_penalty(const std::vector<diff::Parameter<Real>*>& params) {
  Tensor<Real> total;
  for (auto* p : params) {
    if (p->l2_coefficient <= 0) continue;
    auto term = diff::scale(diff::sum_squares(p->tensor), p->l2_coefficient);
    total = total.defined() ? diff::add(total, term) : term;
  }
  return total;
}

template Tensor<float> total_objective(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                       const LossWeights&);
template Tensor<double> total_objective(const Tensor<double>&, const Tensor<double>&,
                                        const Tensor<double>&, const LossWeights&);
template Tensor<float> l2_penalty(const std::vector<diff::Parameter<float>*>&);
template Tensor<double> l2_penalty(const std::vector<diff::Parameter<double>*>&);

}  // namespace sicr::train
