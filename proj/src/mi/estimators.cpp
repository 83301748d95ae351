#include "sicr/mi/estimators.hpp"

#include <algorithm>
#include <numeric>

#include "sicr/errors.hpp"

namespace sicr::mi {

std::vector<std::size_t> derangement(std::size_t n, std::mt19937_64& rng) {
  if (n < 2) throw BatchSizeError("marginal shuffling needs a batch of at least 2");
  std::vector<std::size_t> perm(n);
  for (;;) {
    std::iota(perm.begin(), perm.end(), std::size_t(0));
    // Explicit Fisher-Yates so the sequence does not depend on the library's
    // shuffle implementation.
    for (std::size_t i = n - 1; i > 0; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i);
      std::swap(perm[i], perm[pick(rng)]);
    }
    bool fixed = false;
    for (std::size_t i = 0; i < n && !fixed; ++i) fixed = perm[i] == i;
    if (!fixed) return perm;
  }
}

template <typename Real>
PairBatch<Real> shuffle_marginals(const Tensor<Real>& a, const Tensor<Real>& b, std::mt19937_64& rng) {
  if (a.dim(0) != b.dim(0)) throw ShapeError("pair batch: a and b batch sizes differ");
  PairBatch<Real> pb;
  pb.perm = derangement(a.dim(0), rng);
  pb.a = a;
  pb.b_joint = b;
  pb.b_marginal = diff::gather_batch(b, std::span<const std::size_t>(pb.perm));
  return pb;
}

template <typename Real>
Tensor<Real> js_mi_objective(const Tensor<Real>& joint, const Tensor<Real>& marginal) {
  if (joint.size() == 0 || marginal.size() == 0) throw ConfigError("empty pair batch");
  auto pos = diff::neg(diff::mean(diff::softplus(diff::neg(joint))));
  auto negpart = diff::mean(diff::softplus(marginal));
  return diff::sub(pos, negpart);
}

template <typename Real>
Tensor<Real> dv_mi_estimate(const Tensor<Real>& joint, const Tensor<Real>& marginal) {
  if (joint.size() == 0 || marginal.size() == 0) throw ConfigError("empty pair batch");
  return diff::sub(diff::mean(joint), diff::log_mean_exp(marginal));
}

template <typename Real>
Tensor<Real> mi_objective(ObjectiveForm form, const Tensor<Real>& joint, const Tensor<Real>& marginal) {
  return form == ObjectiveForm::JS ? js_mi_objective(joint, marginal) : dv_mi_estimate(joint, marginal);
}

template <typename Real>
PairScorer<Real>::PairScorer(const std::string& name, std::size_t dim_a, std::size_t dim_b,
                             std::mt19937_64& rng, std::size_t hidden, Real l2) {
  net_.template add<model::Dense<Real>>(name + ".hidden", dim_a + dim_b, hidden, true, rng, l2);
  net_.template add<model::Elu<Real>>();
  net_.template add<model::Dense<Real>>(name + ".out", hidden, 1, true, rng, l2);
}

template <typename Real>
Tensor<Real> PairScorer<Real>::score(const Tensor<Real>& a, const Tensor<Real>& b,
                                     ForwardContext& ctx) const {
  auto fa = a.rank() == 2 ? a : diff::flatten(a);
  auto fb = b.rank() == 2 ? b : diff::flatten(b);
  return net_.forward(diff::concat_last<Real>({fa, fb}), ctx);
}

template <typename Real>
LocalScorer<Real>::LocalScorer(const std::string& name, std::size_t depth_local,
                               std::size_t dim_global, std::mt19937_64& rng, std::size_t hidden,
                               Real l2) {
  net_.template add<model::Conv2D<Real>>(name + ".conv1", 1, 1, depth_local + dim_global, hidden, true,
                                         rng, diff::Stride2{}, diff::Padding::Valid, l2);
  net_.template add<model::Elu<Real>>();
  net_.template add<model::Conv2D<Real>>(name + ".conv2", 1, 1, hidden, 1, true, rng, diff::Stride2{},
                                         diff::Padding::Valid, l2);
}

template <typename Real>
Tensor<Real> LocalScorer<Real>::score(const Tensor<Real>& f_re, const Tensor<Real>& f_g,
                                      ForwardContext& ctx) const {
  if (f_re.rank() != 4 || f_g.rank() != 2 || f_re.dim(0) != f_g.dim(0)) {
    throw ShapeError("local scorer expects f_re [B,h,w,d] and f_g [B,d_g]");
  }
  auto tiled = diff::broadcast_spatial(f_g, f_re.dim(1), f_re.dim(2));
  return net_.forward(diff::concat_last<Real>({f_re, tiled}), ctx);
}

template <typename Real>
GlobalScorer<Real>::GlobalScorer(const std::string& name, const model::EncoderConfig& config,
                                 std::mt19937_64& rng, std::size_t hidden, Real l2)
    : embedder_(model::build_global_block<Real>(config, name + ".embed", rng)) {
  const auto fl = model::local_feature_shape(config);
  const std::size_t dg = embedder_.output_shape({1, fl[0], fl[1], fl[2]})[1];
  head_.template add<model::Dense<Real>>(name + ".hidden", 2 * dg, hidden, true, rng, l2);
  head_.template add<model::Elu<Real>>();
  head_.template add<model::Dense<Real>>(name + ".out", hidden, 1, true, rng, l2);
}

template <typename Real>
Tensor<Real> GlobalScorer<Real>::embed(const Tensor<Real>& f_re, ForwardContext& ctx) const {
  return embedder_.forward(f_re, ctx);
}

template <typename Real>
Tensor<Real> GlobalScorer<Real>::score(const Tensor<Real>& embedding, const Tensor<Real>& f_g,
                                       ForwardContext& ctx) const {
  return head_.forward(diff::concat_last<Real>({embedding, f_g}), ctx);
}

template <typename Real>
std::vector<diff::Parameter<Real>*> GlobalScorer<Real>::parameters() const {
  auto out = embedder_.parameters();
  for (auto* p : head_.parameters()) out.push_back(p);
  return out;
}

template <typename Real>
Tensor<Real> decomposition_loss(const Tensor<Real>& f_re, const Tensor<Real>& f_ir,
                                const PairScorer<Real>& m, std::mt19937_64& rng, ForwardContext& ctx,
                                ObjectiveForm form) {
  if (f_re.shape() != f_ir.shape()) throw ShapeError("decomposition: f_re and f_ir shapes differ");
  auto pairs = shuffle_marginals(diff::gradient_reversal(f_re), diff::gradient_reversal(f_ir), rng);
  auto joint = m.score(pairs.a, pairs.b_joint, ctx);
  auto marginal = m.score(pairs.a, pairs.b_marginal, ctx);
  return mi_objective(form, joint, marginal);
}

template <typename Real>
Tensor<Real> local_mi_loss(const Tensor<Real>& f_g, const Tensor<Real>& f_re,
                           const LocalScorer<Real>& t_l, std::mt19937_64& rng, ForwardContext& ctx,
                           ObjectiveForm form) {
  auto pairs = shuffle_marginals(f_re, f_g, rng);
  auto joint = t_l.score(f_re, pairs.b_joint, ctx);
  auto marginal = t_l.score(f_re, pairs.b_marginal, ctx);
  return mi_objective(form, joint, marginal);
}

template <typename Real>
Tensor<Real> global_mi_loss(const Tensor<Real>& f_g, const Tensor<Real>& f_re,
                            const GlobalScorer<Real>& t_g, std::mt19937_64& rng, ForwardContext& ctx,
                            ObjectiveForm form) {
  auto pairs = shuffle_marginals(f_re, f_g, rng);
  auto emb = t_g.embed(f_re, ctx);
  auto joint = t_g.score(emb, pairs.b_joint, ctx);
  auto marginal = t_g.score(emb, pairs.b_marginal, ctx);
  return mi_objective(form, joint, marginal);
}

#define SICR_INSTANTIATE_MI(R)                                                                     \
  template PairBatch<R> shuffle_marginals(const Tensor<R>&, const Tensor<R>&, std::mt19937_64&);   \
  template Tensor<R> js_mi_objective(const Tensor<R>&, const Tensor<R>&);                          \
  template Tensor<R> dv_mi_estimate(const Tensor<R>&, const Tensor<R>&);                           \
  template Tensor<R> mi_objective(ObjectiveForm, const Tensor<R>&, const Tensor<R>&);              \
  template class PairScorer<R>;                                                                    \
  template class LocalScorer<R>;                                                                   \
  template class GlobalScorer<R>;                                                                  \
  template Tensor<R> decomposition_loss(const Tensor<R>&, const Tensor<R>&, const PairScorer<R>&,  \
                                        std::mt19937_64&, ForwardContext&, ObjectiveForm);         \
  template Tensor<R> local_mi_loss(const Tensor<R>&, const Tensor<R>&, const LocalScorer<R>&,      \
                                   std::mt19937_64&, ForwardContext&, ObjectiveForm);              \
  template Tensor<R> global_mi_loss(const Tensor<R>&, const Tensor<R>&, const GlobalScorer<R>&,    \
                                    std::mt19937_64&, ForwardContext&, ObjectiveForm);

SICR_INSTANTIATE_MI(float)
SICR_INSTANTIATE_MI(double)

}  // namespace sicr::mi
