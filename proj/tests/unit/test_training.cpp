#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "sicr/errors.hpp"
#include "sicr/signal/cohort.hpp"
#include "sicr/train/trainer.hpp"

using namespace sicr;
using namespace sicr::train;
using testutil::T64;

namespace {

diff::Parameter<double> param(std::string name, std::vector<double> v) {
  diff::Parameter<double> p;
  p.name = std::move(name);
  const std::size_t n = v.size();
  p.tensor = T64::from({n}, std::move(v), true);
  return p;
}

// log C(n, k)
double log_choose(double n, double k) {
  return std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1);
}

TrainConfig small_config() {
  TrainConfig c;
  c.encoder.n_channels = 4;
  c.encoder.n_times = 64;
  c.encoder.sample_rate = 32;
  c.estimators.pair_hidden = 16;
  c.estimators.local_hidden = 8;
  c.estimators.global_hidden = 8;
  c.batch_size = 8;
  c.epochs = 2;
  return c;
}

std::vector<signal::Trial> small_cohort(std::size_t subjects, std::size_t per_class, double effect,
                                        std::uint64_t seed = 0) {
  signal::CohortSpec spec;
  spec.num_subjects = subjects;
  spec.trials_per_class = per_class;
  spec.n_channels = 4;
  spec.n_times = 64;
  spec.sample_rate = 32;
  spec.class_effect = effect;
  spec.seed = seed;
  return signal::generate_cohort(spec);
}

}  // namespace

TEST_CASE("RAdam leaves parameters alone under zero gradients") {
  auto p = param("w", {0.5, -1.0, 2.0});
  std::vector<diff::Parameter<double>*> ps{&p};
  OptimizerState st;
  for (int s = 0; s < 10; ++s) {
    p.tensor.zero_grad();
    p.tensor.mutable_grad();
    optimizer_step(ps, st, 1e-2);
  }
  CHECK(p.tensor.values() == std::vector<double>{0.5, -1.0, 2.0});
  CHECK(st.step == 10);
}

TEST_CASE("RAdam warm-up and rectification follow the variance term") {
  auto p = param("w", {1.0});
  std::vector<diff::Parameter<double>*> ps{&p};
  OptimizerState st;
  const double b2 = 0.999, rho_inf = 2 / (1 - b2) - 1;
  for (std::size_t t = 1; t <= 8; ++t) {
    const double before = p.tensor.values()[0];
    p.tensor.zero_grad();
    p.tensor.mutable_grad();
    p.tensor.mutable_grad()[0] = 0.3;
    optimizer_step(ps, st, 0.1);
    const double b2t = std::pow(b2, double(t));
    const double rho = rho_inf - 2 * double(t) * b2t / (1 - b2t);
    CHECK(st.rho == doctest::Approx(rho).epsilon(1e-12));
    CHECK(st.rectified == (rho > 4));
    // a constant gradient keeps the bias-corrected first moment at 0.3
    if (!st.rectified) CHECK(before - p.tensor.values()[0] == doctest::Approx(0.1 * 0.3));
  }
  CHECK(st.rectified);
}

TEST_CASE("learning rate decays geometrically") {
  CHECK(lr_at_epoch(1e-3, 0.99, 0) == 1e-3);
  CHECK(lr_at_epoch(1e-3, 0.99, 10) == doctest::Approx(9.0438e-4).epsilon(1e-4));
  for (std::size_t k = 1; k < 50; ++k) {
    CHECK(lr_at_epoch(1e-3, 0.99, k) == doctest::Approx(lr_at_epoch(1e-3, 0.99, k - 1) * 0.99).epsilon(1e-14));
  }
}

TEST_CASE("RAdam solves a convex quadratic") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> start(6), target(6);
  for (auto& v : start) v = u(rng);
  for (auto& v : target) v = u(rng);
  auto p = param("w", start);
  std::vector<diff::Parameter<double>*> ps{&p};
  OptimizerState st;
  auto dist = [&] {
    double s = 0;
    for (std::size_t i = 0; i < 6; ++i) s += std::pow(p.tensor.values()[i] - target[i], 2);
    return std::sqrt(s);
  };
  std::size_t steps = 0;
  while (dist() >= 1e-3 && steps < 2000) {
    p.tensor.zero_grad();
    p.tensor.mutable_grad();
    for (std::size_t i = 0; i < 6; ++i) p.tensor.mutable_grad()[i] = 2 * (p.tensor.values()[i] - target[i]);
    optimizer_step(ps, st, 1e-2);
    ++steps;
  }
  CAPTURE(steps);
  CHECK(dist() < 1e-3);
}

TEST_CASE("RAdam trajectory matches a direct transcription of the algorithm") {
  const std::vector<double> target{0.3, -0.7, 1.1};
  auto p = param("w", {1.0, 0.5, -2.0});
  std::vector<diff::Parameter<double>*> ps{&p};
  OptimizerState st;
  std::vector<double> q{1.0, 0.5, -2.0}, m(3, 0.0), v(3, 0.0);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 3e-2, rho_inf = 2 / (1 - b2) - 1;
  for (int t = 1; t <= 60; ++t) {
    p.tensor.zero_grad();
    for (std::size_t i = 0; i < 3; ++i) p.tensor.mutable_grad()[i] = 2 * (p.tensor.values()[i] - target[i]);
    optimizer_step(ps, st, lr);
    const double rho = rho_inf - 2 * t * std::pow(b2, t) / (1 - std::pow(b2, t));
    for (std::size_t i = 0; i < 3; ++i) {
      const double g = 2 * (q[i] - target[i]);
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      const double mh = m[i] / (1 - std::pow(b1, t));
      if (rho > 4) {
        const double r = std::sqrt((rho - 4) * (rho - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho));
        q[i] -= lr * r * mh / (std::sqrt(v[i] / (1 - std::pow(b2, t))) + eps);
      } else {
        q[i] -= lr * mh;
      }
    }
    for (std::size_t i = 0; i < 3; ++i) CHECK(p.tensor.values()[i] == doctest::Approx(q[i]).epsilon(1e-12));
  }
}

TEST_CASE("non-finite gradient aborts and names the parameter") {
  auto a = param("encoder.ok", {1.0});
  auto b = param("T_g.out.weights", {1.0, 2.0});
  std::vector<diff::Parameter<double>*> ps{&a, &b};
  a.tensor.mutable_grad();
  b.tensor.mutable_grad();
  b.tensor.mutable_grad()[1] = std::nan("");
  OptimizerState st;
  try {
    optimizer_step(ps, st, 1e-3);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("T_g.out.weights") != std::string::npos);
  }
  CHECK(a.tensor.values()[0] == 1.0);  // nothing applied
}

TEST_CASE("minibatches cover each trial at most once") {
  std::mt19937_64 rng(1);
  auto batches = make_minibatches(100, 40, rng);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 40);
  CHECK(batches[1].size() == 40);
  CHECK(batches[2].size() == 20);
  std::set<std::size_t> seen;
  for (auto& b : batches) seen.insert(b.begin(), b.end());
  CHECK(seen.size() == 100);
  CHECK(make_minibatches(81, 40, rng).size() == 2);  // trailing single trial dropped
  CHECK_THROWS_AS(make_minibatches(0, 40, rng), ConfigError);
  CHECK_THROWS_AS(make_minibatches(10, 1, rng), ConfigError);
}

TEST_CASE("minibatches mix subjects like sampling without replacement") {
  const std::size_t subjects = 6, per = 10, n = subjects * per, bs = 8;
  // expected distinct subjects in a batch of bs drawn from n trials
  const double p_absent = std::exp(log_choose(n - per, bs) - log_choose(n, bs));
  const double expected = double(subjects) * (1 - p_absent);
  std::mt19937_64 rng(2);
  double total = 0;
  std::size_t count = 0;
  for (int epoch = 0; epoch < 1000; ++epoch) {
    for (auto& b : make_minibatches(n, bs, rng)) {
      if (b.size() != bs) continue;
      std::set<std::size_t> s;
      for (auto i : b) s.insert(i / per);
      total += double(s.size());
      ++count;
    }
  }
  const double observed = total / double(count);
  CAPTURE(expected);
  CAPTURE(observed);
  CHECK(std::abs(observed - expected) / expected < 0.05);
}

TEST_CASE("total objective is a weighted sum") {
  std::mt19937_64 rng(3);
  auto c = testutil::random_tensor({1}, rng);
  auto d = testutil::random_tensor({1}, rng);
  auto m = testutil::random_tensor({1}, rng);
  const double cv = c.values()[0], dv = d.values()[0], mv = m.values()[0];
  CHECK(total_objective(c, d, m, LossWeights{1, 0, 0}).item() == cv);
  CHECK(total_objective(c, T64(), T64(), LossWeights{0.5, 0.3, 0.5}).item() ==
        doctest::Approx(0.5 * cv));
  const LossWeights w{0.5, 0.3, 0.5};
  CHECK(total_objective(c, d, m, w).item() == doctest::Approx(0.5 * cv + 0.3 * dv + 0.5 * mv));
  auto twice = [](const T64& t) { return diff::scale(t, 2.0); };
  CHECK(total_objective(twice(c), twice(d), twice(m), w).item() ==
        doctest::Approx(2 * total_objective(c, d, m, w).item()).epsilon(1e-14));
  CHECK(testutil::gradient_check([&] { return total_objective(c, d, m, w); }, {c, d, m}) < 1e-8);
  CHECK_THROWS_AS(LossWeights({-0.1, 0.3, 0.5}).validate(), ConfigError);
  CHECK_THROWS_AS(total_objective(c, d, m, LossWeights{1, -1, 0}), ConfigError);
}

TEST_CASE("gradient of the composite matches finite differences through real losses") {
  std::mt19937_64 rng(9);
  auto x = testutil::random_tensor({3, 4}, rng);
  auto w1 = testutil::random_tensor({4, 2}, rng);
  auto w2 = testutil::random_tensor({4, 1}, rng);
  const std::vector<int> labels{0, 1, 1};
  const LossWeights w{0.7, 0.2, 0.4};
  auto fn = [&] {
    auto cls = diff::softmax_cross_entropy(diff::dense(x, w1, T64()), std::span<const int>(labels));
    auto h = diff::dense(x, w2, T64());
    auto dec = diff::mean(diff::softplus(h));
    auto dim = diff::neg(diff::mean(diff::elu(h)));
    return total_objective(cls, dec, dim, w);
  };
  CHECK(testutil::gradient_check(fn, {x, w1, w2}) < 1e-6);
}

TEST_CASE("variants enable their losses") {
  const LossWeights w;
  auto a = active_losses(Variant::I, w);
  CHECK((a.dec && !a.local && !a.global));
  a = active_losses(Variant::II, w);
  CHECK((a.dec && !a.local && a.global));
  a = active_losses(Variant::III, w);
  CHECK((a.dec && a.local && !a.global));
  a = active_losses(Variant::IV, w);
  CHECK((a.dec && a.local && a.global));
  a = active_losses(Variant::IV, LossWeights{1, 0, 0});
  CHECK((!a.dec && !a.local && !a.global));
  CHECK(parse_variant("III") == Variant::III);
  CHECK_THROWS_AS(parse_variant("V"), ConfigError);
}

TEST_CASE("every parameter receives gradient; f_ir half of V gets none from L_cls") {
  auto cfg = small_config();
  cfg.encoder.dropout_rate = 0;
  RngStreams r(5);
  SicrModel<double> m(cfg, r.init);
  auto trials = small_cohort(2, 4, 0.3);
  std::vector<std::size_t> idx(trials.size());
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  std::vector<int> labels;
  auto x = stack_trials<double>(trials, idx, &labels);

  model::ForwardContext ctx{model::Mode::Train, &r.dropout};
  {
    diff::Tape<double> tape;
    auto losses = compute_objective(m, x, std::span<const int>(labels), cfg, ctx, r.shuffle);
    tape.backward(losses.total);
  }
  for (auto* p : m.parameters()) {
    double norm = 0;
    if (p->tensor.has_grad())
      for (double g : p->tensor.grad()) norm += g * g;
    CAPTURE(p->name);
    CHECK(norm > 0);
  }

  for (auto* p : m.parameters()) p->tensor.zero_grad();
  {
    diff::Tape<double> tape;
    auto f = m.network().forward(x, ctx);
    tape.backward(diff::softmax_cross_entropy(f.logits, std::span<const int>(labels)));
  }
  auto& k = m.network().splitter().kernel().tensor;  // [1,1,d1,2*d1]
  const std::size_t d1 = k.dim(2), out = k.dim(3);
  double re_norm = 0;
  for (std::size_t i = 0; i < d1; ++i)
    for (std::size_t o = 0; o < out; ++o) {
      const double g = k.grad()[i * out + o];
      if (o >= d1) {
        CHECK(g == 0.0);
      } else {
        re_norm += g * g;
      }
    }
  CHECK(re_norm > 0);
}

TEST_CASE("one step does not increase the mean objective over dropout masks") {
  // The GRL makes the decomposition term a min-max, so the check runs on the
  // descent part of the composite (beta = 0).
  auto cfg = small_config();
  cfg.weights = LossWeights{0.5, 0.0, 0.5};
  RngStreams r(6);
  SicrModel<double> m(cfg, r.init);
  auto trials = small_cohort(2, 4, 0.3);
  std::vector<std::size_t> idx(trials.size());
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  std::vector<int> labels;
  auto x = stack_trials<double>(trials, idx, &labels);
  const auto params = m.trainable(active_losses(cfg.variant, cfg.weights));

  auto mean_objective = [&](bool backprop) {
    double sum = 0;
    for (int k = 0; k < 20; ++k) {
      std::mt19937_64 drop(100 + k), shuf(200 + k);
      model::ForwardContext ctx{model::Mode::Train, &drop};
      diff::Tape<double> tape;
      auto losses = compute_objective(m, x, std::span<const int>(labels), cfg, ctx, shuf);
      sum += losses.total_value;
      if (backprop) tape.backward(diff::scale(losses.total, 1.0 / 20));
    }
    return sum / 20;
  };
  // batch-norm running statistics move with every train-mode pass; restore
  // them so both measurements see the same state
  const auto snap = m.snapshot();
  const double before = mean_objective(true);
  m.restore(snap);
  OptimizerState st;
  optimizer_step(params, st, 1e-4);
  const double after = mean_objective(false);
  CAPTURE(before);
  CAPTURE(after);
  CHECK(after <= before);
}

TEST_CASE("fit: history length, determinism, and separable data") {
  auto cfg = small_config();
  cfg.epochs = 3;
  auto train_set = small_cohort(2, 10, 0.3);
  auto val_set = small_cohort(1, 4, 0.3, 7);

  auto run = [&] {
    RngStreams r(11);
    SicrModel<float> m(cfg, r.init);
    return fit(m, train_set, val_set, cfg, r);
  };
  auto h1 = run();
  auto h2 = run();
  const std::size_t per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
  CHECK(h1.steps.size() == cfg.epochs * per_epoch);
  CHECK(h1.epochs.size() == cfg.epochs);
  std::ostringstream a, b;
  h1.write_csv(a);
  h2.write_csv(b);
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("epoch,L_cls,L_dec,L_local,L_global,total,val_acc,lr\n", 0) == 0);
  CHECK(h1.epochs[2].lr == doctest::Approx(cfg.lr * 0.99 * 0.99));

  // Class is a sign flip of a constant offset on every channel.
  auto separable = [](std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> noise;
    std::vector<signal::Trial> out;
    for (std::size_t i = 0; i < n; ++i) {
      signal::Trial t;
      t.n_channels = 4;
      t.n_times = 64;
      t.sample_rate = 32;
      t.label = int(i % 2);
      t.subject = std::uint16_t(i % 3);
      t.x.resize(4 * 64);
      for (auto& v : t.x) v = noise(rng) + (t.label ? 1.0f : -1.0f);
      out.push_back(std::move(t));
    }
    return out;
  };
  auto sep_cfg = small_config();
  sep_cfg.weights = LossWeights{1, 0, 0};
  sep_cfg.epochs = 30;
  RngStreams r(12);
  SicrModel<float> m(sep_cfg, r.init);
  auto h = fit(m, separable(160, 1), separable(40, 2), sep_cfg, r);
  double best = 0;
  for (auto& e : h.epochs) best = std::max(best, e.val_acc);
  CHECK(best >= 0.95);
  CHECK(evaluate(m, separable(40, 2)).accuracy >= 0.95);
}

TEST_CASE("fit rejects bad configurations") {
  auto cfg = small_config();
  auto trials = small_cohort(1, 4, 0.3);
  RngStreams r(1);
  SicrModel<float> m(cfg, r.init);
  cfg.batch_size = 1;
  CHECK_THROWS_AS(fit(m, trials, {}, cfg, r), ConfigError);
}
