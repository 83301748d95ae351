#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "sicr/mi/estimators.hpp"
#include "sicr/model/network.hpp"
#include "sicr/signal/trial.hpp"
#include "sicr/train/objective.hpp"
#include "sicr/train/optimizer.hpp"

namespace sicr::train {

struct EstimatorConfig {
  std::size_t pair_hidden = 256;   // M
  std::size_t local_hidden = 64;   // T_l
  std::size_t global_hidden = 32;  // T_g head
  // Any weight decay pins a scorer at the all-zero saddle, where the MI
  // gradient vanishes; estimators train unregularized.
  double l2 = 0.0;
};

struct TrainConfig {
  model::EncoderConfig encoder;
  EstimatorConfig estimators;
  LossWeights weights;
  Variant variant = Variant::IV;
  std::size_t epochs = 60;
  std::size_t batch_size = 40;
  double lr = 1e-3;
  double lr_decay = 0.99;
  std::size_t patience = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

// Independent generators for initialization, batch order, dropout masks and
// marginal shuffles, so changing one consumer never perturbs the others.
struct RngStreams {
  std::mt19937_64 init;
  std::mt19937_64 batch;
  std::mt19937_64 dropout;
  std::mt19937_64 shuffle;
  explicit RngStreams(std::uint64_t seed);
};

// The encoder stack plus the three estimators. The network is initialized
// first so its weights do not depend on the estimator configuration.
template <typename Real>
class SicrModel {
 public:
  SicrModel(const TrainConfig& config, std::mt19937_64& init_rng);

  model::Network<Real>& network() { return network_; }
  const mi::PairScorer<Real>& pair_scorer() const { return pair_; }
  const mi::LocalScorer<Real>& local_scorer() const { return local_; }
  const mi::GlobalScorer<Real>& global_scorer() const { return global_; }

  // Network, then M, T_l, T_g.
  std::vector<diff::Parameter<Real>*> parameters() const;
  // Network plus the estimators of active losses.
  std::vector<diff::Parameter<Real>*> trainable(const ActiveLosses& active) const;
  std::vector<model::Buffer<Real>> buffers() const;

  struct Snapshot {
    std::vector<std::vector<Real>> params;
    std::vector<std::vector<Real>> buffers;
  };
  Snapshot snapshot() const;
  void restore(const Snapshot& s);

 private:
  model::Network<Real> network_;
  mi::PairScorer<Real> pair_;
  mi::LocalScorer<Real> local_;
  mi::GlobalScorer<Real> global_;
};

// Loss components of one forward pass. dec/local/global hold the minimized
// (training-signed) values: the negated MI objectives. Inactive terms are 0.
template <typename Real>
struct StepLosses {
  Tensor<Real> total;
  double cls = 0, dec = 0, local = 0, global = 0, l2 = 0, total_value = 0;
};

template <typename Real>
StepLosses<Real> compute_objective(SicrModel<Real>& model, const Tensor<Real>& x,
                                   std::span<const int> labels, const TrainConfig& config,
                                   model::ForwardContext& ctx, std::mt19937_64& shuffle_rng);

// Epoch order over the pooled multi-subject set, subjects ignored. A final
// batch shorter than 2 is dropped.
std::vector<std::vector<std::size_t>> make_minibatches(std::size_t n_trials, std::size_t batch_size,
                                                       std::mt19937_64& rng);

template <typename Real>
Tensor<Real> stack_trials(const std::vector<signal::Trial>& trials, std::span<const std::size_t> idx,
                          std::vector<int>* labels = nullptr);

struct Evaluation {
  double loss = 0;      // mean classification cross-entropy
  double accuracy = 0;  // fraction correct
  std::vector<int> predictions;
};

template <typename Real>
Evaluation evaluate(SicrModel<Real>& model, const std::vector<signal::Trial>& trials);

struct StepRecord {
  std::size_t epoch = 0, step = 0;
  double cls = 0, dec = 0, local = 0, global = 0, total = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double cls = 0, dec = 0, local = 0, global = 0, total = 0;
  double val_loss = 0, val_acc = 0, lr = 0;
};

struct History {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;

  // epoch,L_cls,L_dec,L_local,L_global,total,val_acc,lr
  void write_csv(std::ostream& out) const;
};

// Trains every active component jointly with one optimizer. Early-stops on
// validation classification loss and restores the best-validation weights.
// With an empty validation set the final weights are kept.
template <typename Real>
History fit(SicrModel<Real>& model, const std::vector<signal::Trial>& train_set,
            const std::vector<signal::Trial>& val_set, const TrainConfig& config, RngStreams& rngs);

}  // namespace sicr::train
