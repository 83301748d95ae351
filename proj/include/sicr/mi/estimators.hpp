#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "sicr/model/network.hpp"

namespace sicr::mi {

using diff::Tensor;
using model::ForwardContext;

enum class ObjectiveForm { JS, DV };

// Uniform over permutations without fixed points: draws uniform permutations
// until one is a derangement. Throws BatchSizeError for n < 2.
std::vector<std::size_t> derangement(std::size_t n, std::mt19937_64& rng);

// Aligned pairs (a_i, b_i) and shuffled pairs (a_i, b_perm[i]).
template <typename Real>
struct PairBatch {
  Tensor<Real> a;
  Tensor<Real> b_joint;
  Tensor<Real> b_marginal;
  std::vector<std::size_t> perm;
};

template <typename Real>
PairBatch<Real> shuffle_marginals(const Tensor<Real>& a, const Tensor<Real>& b, std::mt19937_64& rng);

// mean_J[-sp(-T)] - mean_M[sp(T)]
template <typename Real>
Tensor<Real> js_mi_objective(const Tensor<Real>& joint_scores, const Tensor<Real>& marginal_scores);

// mean_J[T] - log mean_M[e^T]
template <typename Real>
Tensor<Real> dv_mi_estimate(const Tensor<Real>& joint_scores, const Tensor<Real>& marginal_scores);

template <typename Real>
Tensor<Real> mi_objective(ObjectiveForm form, const Tensor<Real>& joint_scores,
                          const Tensor<Real>& marginal_scores);

// M: flattens both inputs, concatenates, dense(hidden) + ELU, dense(1).
template <typename Real>
class PairScorer {
 public:
  PairScorer(const std::string& name, std::size_t dim_a, std::size_t dim_b, std::mt19937_64& rng,
             std::size_t hidden = 256, Real l2 = Real(0));
  // [B, 1]
  Tensor<Real> score(const Tensor<Real>& a, const Tensor<Real>& b, ForwardContext& ctx) const;
  std::vector<diff::Parameter<Real>*> parameters() const { return net_.parameters(); }
  model::Sequential<Real>& network() { return net_; }

 private:
  model::Sequential<Real> net_;
};

// T_l: concat-and-convolve; 1x1 conv(hidden) + ELU + 1x1 conv(1) per patch.
template <typename Real>
class LocalScorer {
 public:
  LocalScorer(const std::string& name, std::size_t depth_local, std::size_t dim_global,
              std::mt19937_64& rng, std::size_t hidden = 64, Real l2 = Real(0));
  // f_re [B,h,w,d1], f_g [B,d_g] -> [B,h,w,1]
  Tensor<Real> score(const Tensor<Real>& f_re, const Tensor<Real>& f_g, ForwardContext& ctx) const;
  std::vector<diff::Parameter<Real>*> parameters() const { return net_.parameters(); }

 private:
  model::Sequential<Real> net_;
};

// T_g: embeds f_re with a fresh copy of the global encoder's architecture,
// concatenates with f_g, then dense(hidden) + ELU + dense(1). A single linear
// layer on the concatenation would score the two halves additively, which
// cannot tell aligned pairs from shuffled ones.
template <typename Real>
class GlobalScorer {
 public:
  GlobalScorer(const std::string& name, const model::EncoderConfig& config, std::mt19937_64& rng,
               std::size_t hidden = 32, Real l2 = Real(0));
  Tensor<Real> embed(const Tensor<Real>& f_re, ForwardContext& ctx) const;
  // embedding [B, d_g], f_g [B, d_g] -> [B, 1]
  Tensor<Real> score(const Tensor<Real>& embedding, const Tensor<Real>& f_g, ForwardContext& ctx) const;
  std::vector<diff::Parameter<Real>*> parameters() const;
  std::vector<model::Buffer<Real>> buffers() const { return embedder_.buffers(); }

 private:
  model::Sequential<Real> embedder_;
  model::Sequential<Real> head_;
};

// The JS objective between f_re and f_ir with gradient reversal on both
// inputs: M's gradients are those of the objective, the encoder's are negated.
// The training loss is the negation of this value, so one descent step moves
// M up the objective and E_l/V down it.
template <typename Real>
Tensor<Real> decomposition_loss(const Tensor<Real>& f_re, const Tensor<Real>& f_ir,
                                const PairScorer<Real>& m, std::mt19937_64& rng, ForwardContext& ctx,
                                ObjectiveForm form = ObjectiveForm::JS);

// Local objective averaged over all h1*w1 patches; marginals shuffle f_g.
template <typename Real>
Tensor<Real> local_mi_loss(const Tensor<Real>& f_g, const Tensor<Real>& f_re,
                           const LocalScorer<Real>& t_l, std::mt19937_64& rng, ForwardContext& ctx,
                           ObjectiveForm form = ObjectiveForm::JS);

// Global objective; marginals shuffle f_g.
template <typename Real>
Tensor<Real> global_mi_loss(const Tensor<Real>& f_g, const Tensor<Real>& f_re,
                            const GlobalScorer<Real>& t_g, std::mt19937_64& rng, ForwardContext& ctx,
                            ObjectiveForm form = ObjectiveForm::JS);

}  // namespace sicr::mi
