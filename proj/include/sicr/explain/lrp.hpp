#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "sicr/model/network.hpp"
#include "sicr/signal/trial.hpp"

namespace sicr::explain {

// Signed relevance per input sample, row-major [channel][time].
struct RelevanceMap {
  std::size_t n_channels = 0;
  std::size_t n_times = 0;
  int target = 0;
  std::vector<double> values;

  double at(std::size_t c, std::size_t t) const { return values[c * n_times + t]; }
};

// Relevance totals met on the way down, for conservation checks.
struct LrpDetails {
  double output = 0;                // relevance injected at the target logit
  std::vector<double> layer_sums;   // after each propagation step, output side first
  std::vector<double> f_ir_relevance;
};

// Moves `relevance` (shaped like the chain's output) back to the chain's
// input. Linear layers, together with any normalization layers directly
// after them, use the epsilon rule R_i = a_i * sum_j w_ij R_j / (z_j + eps
// sign(z_j)); activations pass relevance through; pooling, dropout and
// reshapes route it along their Jacobian (max-pooling to the argmax).
template <typename Real>
diff::Tensor<Real> lrp_chain(const std::vector<model::Layer<Real>*>& layers, const diff::Tensor<Real>& input,
                             const diff::Tensor<Real>& relevance, double eps,
                             std::vector<double>* layer_sums = nullptr);

template <typename Real>
std::vector<model::Layer<Real>*> layers_of(const model::Sequential<Real>& seq);

// Epsilon-LRP from the target logit down to the input trial. Relevance for
// f_ir is zero by construction; only f_re feeds the classifier. A model whose
// weights are all zero gets a warning and an all-zero map.
template <typename Real>
RelevanceMap lrp_epsilon(model::Network<Real>& net, const signal::Trial& trial, int target,
                         double eps = 1e-2, LrpDetails* details = nullptr);

enum class Aggregation {
  Magnitude,  // mean |R| over time: where decision-relevant activity sits, whatever its sign
  Signed,     // mean R over time: net evidence for the target class
};

// Per-channel time average.
std::vector<double> channel_relevance(const RelevanceMap& map, Aggregation how = Aggregation::Magnitude);

// Min-max scaling to [0, 1]; a constant vector maps to 0.5 everywhere.
std::vector<double> normalize_unit(std::vector<double> v);

// Time average per map, then mean over maps, then normalize_unit.
std::vector<double> topographic_relevance(const std::vector<RelevanceMap>& maps,
                                          Aggregation how = Aggregation::Magnitude);

// kind,subject_id,class,dim_0..dim_{D-1} with one row per trial and kind
// (f_ir, f_re, f_g). D is the widest kind; narrower kinds leave the trailing
// cells empty. Values keep float32 round-trip precision.
template <typename Real>
void export_embeddings(std::ostream& out, model::Network<Real>& net, const std::vector<signal::Trial>& trials);

}  // namespace sicr::explain
