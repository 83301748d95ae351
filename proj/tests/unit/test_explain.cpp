#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "helpers.hpp"
#include "sicr/errors.hpp"
#include "sicr/explain/lrp.hpp"
#include "sicr/log.hpp"
#include "sicr/signal/cohort.hpp"

using namespace sicr;
using namespace sicr::explain;
using testutil::T64;

namespace {

model::EncoderConfig tiny_encoder() {
  model::EncoderConfig c;
  c.n_channels = 4;
  c.n_times = 64;
  c.sample_rate = 32;
  c.eegnet_pool_global = 2;
  return c;
}

signal::Trial noise_trial(const model::EncoderConfig& c, std::mt19937_64& rng) {
  signal::Trial t;
  t.n_channels = c.n_channels;
  t.n_times = c.n_times;
  t.sample_rate = c.sample_rate;
  t.x = testutil::random_floats(c.n_channels * c.n_times, rng);
  return t;
}

double sum(const T64& t) { return std::accumulate(t.data().begin(), t.data().end(), 0.0); }

RelevanceMap rows_map(std::vector<std::vector<double>> rows) {
  RelevanceMap m{rows.size(), rows[0].size(), 0, {}};
  for (auto& r : rows) m.values.insert(m.values.end(), r.begin(), r.end());
  return m;
}

}  // namespace

TEST_CASE("a single bias-free linear layer conserves relevance") {
  std::mt19937_64 rng(1);
  model::Sequential<double> seq;
  seq.add<model::Dense<double>>("d", 12, 3, false, rng);
  auto x = testutil::random_tensor({1, 12}, rng, false);
  model::ForwardContext ctx;
  auto z = seq.forward(x, ctx);
  for (std::size_t j = 0; j < 3; ++j) {
    std::vector<double> r(3, 0.0);
    r[j] = z[j];
    auto r_in = lrp_chain(layers_of(seq), x, T64::from({1, 3}, r), 1e-12);
    CHECK(std::abs(sum(r_in) - z[j]) < 1e-5);
  }
}

TEST_CASE("conservation slack shrinks as epsilon goes to zero") {
  std::mt19937_64 rng(2);
  model::Sequential<double> seq;
  seq.add<model::Dense<double>>("a", 10, 6, false, rng);
  seq.add<model::Elu<double>>();
  seq.add<model::Dense<double>>("b", 6, 2, false, rng);
  auto x = testutil::random_tensor({1, 10}, rng, false);
  model::ForwardContext ctx;
  auto z = seq.forward(x, ctx);
  const T64 r_out = T64::from({1, 2}, {z[0], 0.0});
  std::vector<double> slack;
  for (double eps : {1e-1, 1e-2, 1e-3}) {
    std::vector<double> sums;
    lrp_chain(layers_of(seq), x, r_out, eps, &sums);
    REQUIRE(sums.size() == 2);
    // Output side first: |R_out - R_mid| + |R_mid - R_in|.
    slack.push_back(std::abs(z[0] - sums[0]) + std::abs(sums[0] - sums[1]));
  }
  CHECK(slack[0] > slack[1]);
  CHECK(slack[1] > slack[2]);
}

TEST_CASE("normalization is folded into the preceding linear map") {
  std::mt19937_64 rng(3);
  model::Sequential<double> seq;
  auto& dense = seq.add<model::Dense<double>>("d", 5, 4, true, rng);
  auto& bn = seq.add<model::BatchNorm<double>>("bn", 4);
  for (std::size_t k = 0; k < 4; ++k) {
    dense.bias().tensor.values()[k] = 0.1 * double(k) - 0.15;
    bn.scale().tensor.values()[k] = 0.5 + 0.3 * double(k);
    bn.shift().tensor.values()[k] = -0.2 + 0.1 * double(k);
    bn.running().mean[k] = 0.05 * double(k);
    bn.running().var[k] = 0.5 + double(k);
  }
  // The same affine map as one dense layer.
  model::Sequential<double> folded;
  auto& f = folded.add<model::Dense<double>>("f", 5, 4, true, rng);
  for (std::size_t k = 0; k < 4; ++k) {
    const double a = bn.scale().tensor[k] / std::sqrt(bn.running().var[k] + bn.eps());
    for (std::size_t i = 0; i < 5; ++i) f.weights().tensor.values()[i * 4 + k] = a * dense.weights().tensor[i * 4 + k];
    f.bias().tensor.values()[k] = a * (dense.bias().tensor[k] - bn.running().mean[k]) + bn.shift().tensor[k];
  }
  auto x = testutil::random_tensor({1, 5}, rng, false);
  const T64 r = T64::from({1, 4}, {0.3, -0.2, 0.9, 0.1});
  auto a = lrp_chain(layers_of(seq), x, r, 1e-2);
  auto b = lrp_chain(layers_of(folded), x, r, 1e-2);
  for (std::size_t i = 0; i < 5; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-10));
}

TEST_CASE("max pooling routes relevance to the selected input") {
  model::Sequential<double> seq;
  seq.add<model::MaxPool<double>>(diff::Window2{1, 2}, diff::Stride2{1, 2});
  const T64 x = T64::from({1, 1, 4, 1}, {0.1, 0.7, -0.3, -0.5});
  auto r = lrp_chain(layers_of(seq), x, T64::from({1, 1, 2, 1}, {2.0, 3.0}), 1e-2);
  CHECK(r.values() == std::vector<double>{0.0, 2.0, 3.0, 0.0});
}

TEST_CASE("network LRP: f_ir gets nothing and zero input gets nothing") {
  std::mt19937_64 rng(4);
  const auto cfg = tiny_encoder();
  model::Network<double> net(cfg, rng);
  const auto trial = noise_trial(cfg, rng);
  LrpDetails d;
  const auto map = lrp_epsilon(net, trial, 1, 1e-2, &d);
  CHECK(map.values.size() == cfg.n_channels * cfg.n_times);
  CHECK(map.target == 1);
  REQUIRE_FALSE(d.f_ir_relevance.empty());
  for (double v : d.f_ir_relevance) CHECK(v == 0.0);
  for (double v : map.values) CHECK(std::isfinite(v));
  CHECK(std::any_of(map.values.begin(), map.values.end(), [](double v) { return v != 0; }));

  auto zero = trial;
  std::fill(zero.x.begin(), zero.x.end(), 0.0f);
  const auto zmap = lrp_epsilon(net, zero, 0, 1e-2);
  for (double v : zmap.values) CHECK(v == 0.0);

  // Parameters come back with gradient tracking intact and no gradient.
  for (auto* p : net.parameters()) {
    CHECK(p->tensor.requires_grad());
    CHECK_FALSE(p->tensor.has_grad());
  }
  CHECK_THROWS_AS(lrp_epsilon(net, trial, 2), ConfigError);
  CHECK_THROWS_AS(lrp_epsilon(net, trial, 0, 0.0), ConfigError);
  auto wrong = trial;
  wrong.n_times = 32;
  CHECK_THROWS_AS(lrp_epsilon(net, wrong, 0), ShapeError);
}

TEST_CASE("network LRP on DeepConvNet passes through max pooling") {
  std::mt19937_64 rng(5);
  auto cfg = tiny_encoder();
  cfg.backbone = model::Backbone::DeepConvNet;
  cfg.n_times = 300;
  cfg.base_depth = 3;
  model::Network<float> net(cfg, rng);
  const auto map = lrp_epsilon(net, noise_trial(cfg, rng), 0);
  for (double v : map.values) CHECK(std::isfinite(v));
  CHECK(std::any_of(map.values.begin(), map.values.end(), [](double v) { return v != 0; }));
}

TEST_CASE("an all-zero model warns and yields an all-zero map") {
  std::mt19937_64 rng(6);
  const auto cfg = tiny_encoder();
  model::Network<double> net(cfg, rng);
  for (auto* p : net.parameters()) std::fill(p->tensor.values().begin(), p->tensor.values().end(), 0.0);
  std::vector<std::string> warnings;
  auto previous = set_warning_sink([&](const std::string& m) { warnings.push_back(m); });
  const auto map = lrp_epsilon(net, noise_trial(cfg, rng), 0);
  set_warning_sink(previous);
  CHECK(warnings.size() == 1);
  for (double v : map.values) CHECK(v == 0.0);
}

TEST_CASE("topographic relevance: time average, trial average, unit range") {
  const auto m = rows_map({{1, 1, 1}, {2, 2, 2}, {3, 3, 3}});
  CHECK(topographic_relevance({m}) == std::vector<double>{0, 0.5, 1});
  CHECK(topographic_relevance({m, m, m}) == topographic_relevance({m}));
  CHECK(topographic_relevance({rows_map({{4, 4}, {4, 4}})}) == std::vector<double>{0.5, 0.5});

  // Magnitude counts oscillating relevance; the signed mean cancels it.
  const auto osc = rows_map({{1, -1, 1, -1}, {0.2, 0.2, 0.2, 0.2}});
  CHECK(topographic_relevance({osc}) == std::vector<double>{1, 0});
  CHECK(topographic_relevance({osc}, Aggregation::Signed) == std::vector<double>{0, 1});

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3, 3);
  std::vector<double> v(9);
  for (auto& x : v) x = u(rng);
  const auto once = normalize_unit(v);
  CHECK(*std::min_element(once.begin(), once.end()) == 0.0);
  CHECK(*std::max_element(once.begin(), once.end()) == 1.0);
  const auto twice = normalize_unit(once);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(twice[i] == doctest::Approx(once[i]).epsilon(1e-15));

  CHECK_THROWS_AS(topographic_relevance({}), ConfigError);
  CHECK_THROWS_AS(topographic_relevance({m, rows_map({{1, 2}})}), ShapeError);
}

TEST_CASE("embedding export: one row per trial and kind, float round trip") {
  std::mt19937_64 rng(8);
  const auto cfg = tiny_encoder();
  model::Network<float> net(cfg, rng);
  std::vector<signal::Trial> trials;
  for (int i = 0; i < 5; ++i) {
    trials.push_back(noise_trial(cfg, rng));
    trials.back().label = i % 2;
    trials.back().subject = std::uint16_t(10 + i);
  }
  std::stringstream out;
  export_embeddings(out, net, trials);

  const auto fl = model::local_feature_shape(cfg);
  const std::size_t d_local = fl[0] * fl[1] * fl[2], d_global = model::global_feature_dim(cfg);
  const std::size_t width = std::max(d_local, d_global);
  std::string line;
  std::getline(out, line);
  CHECK(std::count(line.begin(), line.end(), ',') == int(width + 2));
  CHECK(line.rfind("kind,subject_id,class,dim_0,", 0) == 0);

  diff::NoGradGuard<float> guard;
  model::ForwardContext ctx;
  std::map<std::string, std::size_t> rows;
  std::size_t row = 0;
  while (std::getline(out, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.push_back("");
    REQUIRE(cells.size() == width + 3);
    const auto& t = trials[row % trials.size()];
    CHECK(cells[1] == std::to_string(t.subject));
    CHECK(cells[2] == std::to_string(t.label));
    auto f = net.forward(diff::Tensor<float>::from({1, cfg.n_channels, cfg.n_times, 1},
                                                    std::vector<float>(t.x.begin(), t.x.end())),
                         ctx);
    const auto& feat = cells[0] == "f_ir" ? f.f_ir : cells[0] == "f_re" ? f.f_re : f.f_g;
    for (std::size_t k = 0; k < width; ++k) {
      if (k < feat.size()) {
        CHECK(std::stof(cells[3 + k]) == feat[k]);
      } else {
        CHECK(cells[3 + k].empty());
      }
    }
    ++rows[cells[0]];
    ++row;
  }
  CHECK(rows == std::map<std::string, std::size_t>{{"f_g", 5}, {"f_ir", 5}, {"f_re", 5}});
}
