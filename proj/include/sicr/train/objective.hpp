#pragma once

#include <string>
#include <vector>

#include "sicr/diff/ops.hpp"
#include "sicr/diff/parameter.hpp"

namespace sicr::train {

using diff::Tensor;

struct LossWeights {
  double alpha = 0.5;
  double beta = 0.3;
  double gamma = 0.5;

  void validate() const;
  // "a,b,c"
  static LossWeights parse(const std::string& text);
};

// I: cls + dec. II: + global. III: + local. IV: all.
enum class Variant { I, II, III, IV };

std::string to_string(Variant v);
Variant parse_variant(const std::string& text);

struct ActiveLosses {
  bool dec = false;
  bool local = false;
  bool global = false;
};

// A loss is active when the variant enables it and its weight is nonzero.
ActiveLosses active_losses(Variant v, const LossWeights& w);

// alpha*L_cls + beta*L_dec + gamma*L_dim. Undefined tensors count as zero.
// L_dec and L_dim are the minimized (training-signed) quantities.
template <typename Real>
Tensor<Real> total_objective(const Tensor<Real>& l_cls, const Tensor<Real>& l_dec,
                             const Tensor<Real>& l_dim, const LossWeights& w);

// sum_i l2_i * ||w_i||^2 over parameters with a positive coefficient.
// Undefined when no parameter carries one.
template <typename Real>
Tensor<Real> l2_penalty(const std::vector<diff::Parameter<Real>*>& params);

}  // namespace sicr::train
