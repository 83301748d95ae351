#include "sicr/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "sicr/errors.hpp"

namespace sicr::train {

void TrainConfig::validate() const {
  encoder.validate();
  weights.validate();
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 (marginal shuffling)");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(lr > 0) || !(lr_decay > 0 && lr_decay <= 1)) throw ConfigError("lr must be > 0, decay in (0, 1]");
  if (estimators.pair_hidden < 1 || estimators.local_hidden < 1) {
    throw ConfigError("estimator hidden sizes must be >= 1");
  }
  if (!(estimators.l2 >= 0)) throw ConfigError("estimator l2 must be nonnegative");
}

RngStreams::RngStreams(std::uint64_t seed) {
  auto derive = [seed](std::uint64_t tag) {
    std::seed_seq seq{seed, tag};
    return std::mt19937_64(seq);
  };
  init = derive(1);
  batch = derive(2);
  dropout = derive(3);
  shuffle = derive(4);
}

namespace {

std::size_t flat_local_dim(const model::EncoderConfig& c) {
  auto s = model::local_feature_shape(c);
  return s[0] * s[1] * s[2];
}

}  // namespace

template <typename Real>
SicrModel<Real>::SicrModel(const TrainConfig& c, std::mt19937_64& rng)
    : network_(c.encoder, rng),
      pair_("M", flat_local_dim(c.encoder), flat_local_dim(c.encoder), rng, c.estimators.pair_hidden,
            Real(c.estimators.l2)),
      local_("T_l", model::local_feature_shape(c.encoder)[2], model::global_feature_dim(c.encoder), rng,
             c.estimators.local_hidden, Real(c.estimators.l2)),
      global_("T_g", c.encoder, rng, c.estimators.global_hidden, Real(c.estimators.l2)) {}

template <typename Real>
std::vector<diff::Parameter<Real>*> SicrModel<Real>::parameters() const {
  return trainable(ActiveLosses{true, true, true});
}

template <typename Real>
std::vector<diff::Parameter<Real>*> SicrModel<Real>::trainable(const ActiveLosses& a) const {
  auto out = network_.parameters();
  auto append = [&out](const auto& more) { out.insert(out.end(), more.begin(), more.end()); };
  if (a.dec) append(pair_.parameters());
  if (a.local) append(local_.parameters());
  if (a.global) append(global_.parameters());
  return out;
}

template <typename Real>
std::vector<model::Buffer<Real>> SicrModel<Real>::buffers() const {
  auto out = network_.buffers();
  for (auto& b : global_.buffers()) out.push_back(b);
  return out;
}

template <typename Real>
typename SicrModel<Real>::Snapshot SicrModel<Real>::snapshot() const {
  Snapshot s;
  for (auto* p : parameters()) s.params.push_back(p->tensor.values());
  for (auto& b : buffers()) s.buffers.push_back(*b.values);
  return s;
}

template <typename Real>
void SicrModel<Real>::restore(const Snapshot& s) {
  auto params = parameters();
  auto bufs = buffers();
  if (s.params.size() != params.size() || s.buffers.size() != bufs.size()) {
    throw ContractError("snapshot does not match the model");
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->tensor.values() = s.params[i];
  for (std::size_t i = 0; i < bufs.size(); ++i) *bufs[i].values = s.buffers[i];
}

template <typename Real>
StepLosses<Real> compute_objective(SicrModel<Real>& m, const Tensor<Real>& x,
                                   std::span<const int> labels, const TrainConfig& config,
                                   model::ForwardContext& ctx, std::mt19937_64& shuffle_rng) {
  const ActiveLosses active = active_losses(config.variant, config.weights);
  StepLosses<Real> out;
  auto f = m.network().forward(x, ctx);
  auto l_cls = diff::softmax_cross_entropy(f.logits, labels);
  out.cls = double(l_cls.item());

  Tensor<Real> l_dec, l_dim;
  if (active.dec) {
    l_dec = diff::neg(mi::decomposition_loss(f.f_re, f.f_ir, m.pair_scorer(), shuffle_rng, ctx));
    out.dec = double(l_dec.item());
  }
  if (active.local) {
    auto l = diff::neg(mi::local_mi_loss(f.f_g, f.f_re, m.local_scorer(), shuffle_rng, ctx));
    out.local = double(l.item());
    l_dim = l;
  }
  if (active.global) {
    auto g = diff::neg(mi::global_mi_loss(f.f_g, f.f_re, m.global_scorer(), shuffle_rng, ctx));
    out.global = double(g.item());
    l_dim = l_dim.defined() ? diff::add(l_dim, g) : g;
  }
  out.total = total_objective(l_cls, l_dec, l_dim, config.weights);
  auto l2 = l2_penalty(m.trainable(active));
  if (l2.defined()) {
    out.l2 = double(l2.item());
    out.total = diff::add(out.total, l2);
  }
  out.total_value = double(out.total.item());
  return out;
}

std::vector<std::vector<std::size_t>> make_minibatches(std::size_t n, std::size_t batch_size,
                                                       std::mt19937_64& rng) {
  if (n == 0) throw ConfigError("cannot batch an empty trial set");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t(0));
  for (std::size_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(order[i], order[pick(rng)]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    std::size_t end = std::min(n, start + batch_size);
    if (end - start < 2) break;
    batches.emplace_back(order.begin() + std::ptrdiff_t(start), order.begin() + std::ptrdiff_t(end));
  }
  return batches;
}

template <typename Real>
Tensor<Real> stack_trials(const std::vector<signal::Trial>& trials, std::span<const std::size_t> idx,
                          std::vector<int>* labels) {
  if (idx.empty()) throw ConfigError("empty batch");
  const auto& first = trials.at(idx[0]);
  const std::size_t per = first.n_channels * first.n_times;
  std::vector<Real> data;
  data.reserve(idx.size() * per);
  if (labels) labels->clear();
  for (auto i : idx) {
    const auto& t = trials.at(i);
    if (t.n_channels != first.n_channels || t.n_times != first.n_times) {
      throw ShapeError("trials in one batch must share n_c and n_t");
    }
    data.insert(data.end(), t.x.begin(), t.x.end());
    if (labels) labels->push_back(t.label);
  }
  return Tensor<Real>::from({idx.size(), first.n_channels, first.n_times}, std::move(data));
}

template <typename Real>
Evaluation evaluate(SicrModel<Real>& m, const std::vector<signal::Trial>& trials) {
  Evaluation ev;
  if (trials.empty()) return ev;
  diff::NoGradGuard<Real> guard;
  model::ForwardContext ctx{diff::Mode::Eval, nullptr};
  constexpr std::size_t kChunk = 256;
  double loss_sum = 0;
  std::size_t correct = 0;
  std::vector<int> labels;
  for (std::size_t start = 0; start < trials.size(); start += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, trials.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    auto x = stack_trials<Real>(trials, idx, &labels);
    auto logits = m.network().forward(x, ctx).logits;
    loss_sum += double(diff::softmax_cross_entropy(logits, std::span<const int>(labels)).item()) *
                double(idx.size());
    const std::size_t k = logits.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      auto row = logits.data().subspan(b * k, k);
      int pred = int(std::max_element(row.begin(), row.end()) - row.begin());
      ev.predictions.push_back(pred);
      correct += pred == labels[b];
    }
  }
  ev.loss = loss_sum / double(trials.size());
  ev.accuracy = double(correct) / double(trials.size());
  return ev;
}

void History::write_csv(std::ostream& out) const {
  out << "epoch,L_cls,L_dec,L_local,L_global,total,val_acc,lr\n";
  out.precision(9);
  for (const auto& e : epochs) {
    out << e.epoch << ',' << e.cls << ',' << e.dec << ',' << e.local << ',' << e.global << ','
        << e.total << ',' << e.val_acc << ',' << e.lr << '\n';
  }
}

template <typename Real>
History fit(SicrModel<Real>& m, const std::vector<signal::Trial>& train_set,
            const std::vector<signal::Trial>& val_set, const TrainConfig& config, RngStreams& rngs) {
  config.validate();
  if (train_set.size() < 2) throw ConfigError("training set needs at least 2 trials");
  const ActiveLosses active = active_losses(config.variant, config.weights);
  const auto params = m.trainable(active);
  OptimizerState opt;
  History h;
  h.best_val_loss = std::numeric_limits<double>::infinity();
  typename SicrModel<Real>::Snapshot best;
  bool have_best = false;
  std::size_t since_best = 0;
  std::vector<int> labels;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at_epoch(config.lr, config.lr_decay, epoch);
    auto batches = make_minibatches(train_set.size(), config.batch_size, rngs.batch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    for (std::size_t s = 0; s < batches.size(); ++s) {
      auto x = stack_trials<Real>(train_set, batches[s], &labels);
      for (auto* p : params) p->tensor.zero_grad();
      StepLosses<Real> losses;
      {
        diff::Tape<Real> tape;
        model::ForwardContext ctx{diff::Mode::Train, &rngs.dropout};
        losses = compute_objective(m, x, std::span<const int>(labels), config, ctx, rngs.shuffle);
        if (!std::isfinite(losses.total_value)) {
          throw NumericError("training diverged (non-finite loss) at epoch " + std::to_string(epoch));
        }
        tape.backward(losses.total);
      }
      optimizer_step(params, opt, lr);
      h.steps.push_back({epoch, s, losses.cls, losses.dec, losses.local, losses.global, losses.total_value});
      rec.cls += losses.cls;
      rec.dec += losses.dec;
      rec.local += losses.local;
      rec.global += losses.global;
      rec.total += losses.total_value;
    }
    const double nb = double(batches.size());
    rec.cls /= nb;
    rec.dec /= nb;
    rec.local /= nb;
    rec.global /= nb;
    rec.total /= nb;

    if (!val_set.empty()) {
      auto ev = evaluate(m, val_set);
      rec.val_loss = ev.loss;
      rec.val_acc = ev.accuracy;
      if (!std::isfinite(ev.loss)) {
        throw NumericError("validation loss non-finite at epoch " + std::to_string(epoch));
      }
      if (ev.loss < h.best_val_loss) {
        h.best_val_loss = ev.loss;
        h.best_epoch = epoch;
        best = m.snapshot();
        have_best = true;
        since_best = 0;
      } else {
        ++since_best;
      }
    } else {
      h.best_epoch = epoch;
    }
    h.epochs.push_back(rec);
    if (!val_set.empty() && since_best >= config.patience) break;
  }
  if (have_best) m.restore(best);
  return h;
}

#define SICR_INSTANTIATE_TRAINER(R)                                                               \
  template class SicrModel<R>;                                                                    \
  template StepLosses<R> compute_objective(SicrModel<R>&, const Tensor<R>&, std::span<const int>, \
                                           const TrainConfig&, model::ForwardContext&,            \
                                           std::mt19937_64&);                                     \
  template Tensor<R> stack_trials(const std::vector<signal::Trial>&, std::span<const std::size_t>, \
                                  std::vector<int>*);                                             \
  template Evaluation evaluate(SicrModel<R>&, const std::vector<signal::Trial>&);                 \
  template History fit(SicrModel<R>&, const std::vector<signal::Trial>&,                          \
                       const std::vector<signal::Trial>&, const TrainConfig&, RngStreams&);

SICR_INSTANTIATE_TRAINER(float)
SICR_INSTANTIATE_TRAINER(double)

}  // namespace sicr::train
