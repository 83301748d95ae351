#include <doctest.h>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "sicr/diff/ops.hpp"
#include "sicr/diff/parameter.hpp"

using namespace sicr;
using namespace sicr::diff;
using testutil::gradient_check;
using testutil::random_tensor;
using testutil::T64;

namespace {

// Direct quadruple loop, valid padding.
std::vector<double> naive_conv(const T64& x, const T64& k, std::size_t sh, std::size_t sw) {
  auto B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  auto KH = k.dim(0), KW = k.dim(1), O = k.dim(3);
  auto HO = (H - KH) / sh + 1, WO = (W - KW) / sw + 1;
  std::vector<double> y(B * HO * WO * O, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < HO; ++i)
      for (std::size_t j = 0; j < WO; ++j)
        for (std::size_t o = 0; o < O; ++o) {
          double acc = 0;
          for (std::size_t p = 0; p < KH; ++p)
            for (std::size_t q = 0; q < KW; ++q)
              for (std::size_t c = 0; c < C; ++c)
                acc += x[((b * H + i * sh + p) * W + j * sw + q) * C + c] *
                       k[((p * KW + q) * C + c) * O + o];
          y[((b * HO + i) * WO + j) * O + o] = acc;
        }
  return y;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("tensor construction checks extents") {
  CHECK_THROWS_AS(Tensor<float>::from({2, 0}, {}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>::from({2, 3}, std::vector<float>(5)), ShapeError);
  auto t = Tensor<float>::zeros({2, 3});
  CHECK(t.size() == 6);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("backward seeds the loss with one and rejects non-scalars") {
  auto x = T64::scalar(3.0, true);
  {
    Tape<double> tape;
    auto y = scale(x, 1.0);
    tape.backward(y);
    CHECK(y.grad()[0] == 1.0);
  }
  CHECK(x.grad()[0] == 1.0);

  auto a = T64::scalar(2.5, true), b = T64::scalar(-4.0, true);
  {
    Tape<double> tape;
    tape.backward(mul(a, b));
  }
  CHECK(a.grad()[0] == -4.0);
  CHECK(b.grad()[0] == 2.5);

  Tape<double> tape;
  auto v = T64::from({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(tape.backward(scale(v, 2.0)), ContractError);
}

TEST_CASE("conv2d shape arithmetic, identity and loop oracle") {
  auto x = Tensor<float>::zeros({1, 1, 500, 1});
  auto k = Tensor<float>::zeros({1, 10, 1, 1});
  CHECK(conv2d(x, k).dim(2) == 491);

  std::mt19937_64 rng(1);
  auto xi = random_tensor({2, 3, 5, 3}, rng, false);
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  auto id = T64::from({1, 1, 3, 3}, eye);
  auto y = conv2d(xi, id);
  CHECK(max_abs_diff(y.data(), xi.data()) == 0.0);

  auto xr = random_tensor({1, 8, 12, 2}, rng, false);
  auto kr = random_tensor({1, 3, 2, 4}, rng, false);
  auto yr = conv2d(xr, kr);
  CHECK(yr.shape() == Shape{1, 8, 10, 4});
  CHECK(max_abs_diff(yr.data(), naive_conv(xr, kr, 1, 1)) < 1e-6);

  auto ks = random_tensor({2, 3, 2, 3}, rng, false);
  CHECK(max_abs_diff(conv2d(xr, ks, {2, 3}).data(), naive_conv(xr, ks, 2, 3)) < 1e-12);
}

TEST_CASE("conv2d errors name the offending axis") {
  auto x = Tensor<float>::zeros({1, 2, 5, 1});
  auto k = Tensor<float>::zeros({3, 1, 1, 1});
  try {
    conv2d(x, k);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("height") != std::string::npos);
  }
  auto kd = Tensor<float>::zeros({1, 1, 2, 1});
  CHECK_THROWS_AS(conv2d(x, kd), ShapeError);
}

TEST_CASE("conv2d same padding keeps extents") {
  std::mt19937_64 rng(2);
  auto x = random_tensor({1, 3, 7, 2}, rng, false);
  auto k = random_tensor({3, 3, 2, 2}, rng, false);
  auto y = conv2d(x, k, {1, 1}, Padding::Same);
  CHECK(y.shape() == Shape{1, 3, 7, 2});
  // Zero-padded input through a valid conv is the oracle.
  std::vector<double> padded(1 * 5 * 9 * 2, 0.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 7; ++j)
      for (std::size_t c = 0; c < 2; ++c) padded[((i + 1) * 9 + j + 1) * 2 + c] = x[(i * 7 + j) * 2 + c];
  auto xp = T64::from({1, 5, 9, 2}, padded);
  CHECK(max_abs_diff(y.data(), naive_conv(xp, k, 1, 1)) < 1e-12);
}

TEST_CASE("depthwise conv: zero kernel, per-channel definition, grouped oracle") {
  std::mt19937_64 rng(3);
  auto x = random_tensor({2, 2, 9, 2}, rng, false);
  auto zero = T64::zeros({2, 3, 2, 1});
  auto yz = depthwise_conv2d(x, zero);
  CHECK(std::all_of(yz.data().begin(), yz.data().end(), [](double v) { return v == 0.0; }));

  auto k = random_tensor({2, 3, 2, 1}, rng, false);
  auto y = depthwise_conv2d(x, k);
  for (std::size_t c = 0; c < 2; ++c) {
    // Channel c alone through a 1-in/1-out conv with its own kernel.
    std::vector<double> xc, kc;
    for (std::size_t i = 0; i < x.size() / 2; ++i) xc.push_back(x[i * 2 + c]);
    for (std::size_t i = 0; i < 6; ++i) kc.push_back(k[i * 2 + c]);
    auto ref = naive_conv(T64::from({2, 2, 9, 1}, xc), T64::from({2, 3, 1, 1}, kc), 1, 1);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y[i * 2 + c] == doctest::Approx(ref[i]).epsilon(1e-12));
  }

  auto km = random_tensor({1, 4, 3, 2}, rng, false);
  auto xm = random_tensor({1, 3, 10, 3}, rng, false);
  auto ym = depthwise_conv2d(xm, km);
  std::vector<double> oracle(ym.size());
  const std::size_t WO = 7;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < WO; ++j)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t m = 0; m < 2; ++m) {
          double acc = 0;
          for (std::size_t q = 0; q < 4; ++q) acc += xm[(i * 10 + j + q) * 3 + c] * km[(q * 3 + c) * 2 + m];
          oracle[(i * WO + j) * 6 + c * 2 + m] = acc;
        }
  CHECK(max_abs_diff(ym.data(), oracle) < 1e-6);
}

TEST_CASE("separable conv equals its two-step composition") {
  std::mt19937_64 rng(4);
  auto x = random_tensor({2, 2, 8, 3}, rng, false);
  auto dk = random_tensor({1, 3, 3, 1}, rng, false);
  auto pk = random_tensor({1, 1, 3, 4}, rng, false);
  auto y = separable_conv2d(x, dk, pk);
  auto two_step = conv2d(depthwise_conv2d(x, dk), pk);
  CHECK(std::equal(y.data().begin(), y.data().end(), two_step.data().begin()));

  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  auto yi = separable_conv2d(x, dk, T64::from({1, 1, 3, 3}, eye));
  CHECK(max_abs_diff(yi.data(), depthwise_conv2d(x, dk).data()) == 0.0);

  std::vector<double> dirac(3, 1.0);
  auto yd = separable_conv2d(x, T64::from({1, 1, 3, 1}, dirac), pk);
  CHECK(max_abs_diff(yd.data(), conv2d(x, pk).data()) < 1e-15);
}

TEST_CASE("max pool values, tie rule and scanning oracle") {
  auto x = T64::from({1, 1, 6, 1}, {1, 2, 3, 4, 5, 6});
  auto y = max_pool2d(x, {1, 3}, {1, 3});
  CHECK(y.shape() == Shape{1, 1, 2, 1});
  CHECK(y[0] == 3);
  CHECK(y[1] == 6);

  auto c = T64::full({1, 2, 6, 1}, 0.5, true);
  {
    Tape<double> tape;
    tape.backward(sum(max_pool2d(c, {2, 3}, {2, 3})));
  }
  std::vector<double> expect(12, 0.0);
  expect[0] = 1.0;
  expect[3] = 1.0;
  CHECK(std::equal(expect.begin(), expect.end(), c.grad().begin()));

  CHECK_THROWS_AS(max_pool2d(x, {1, 0}, {1, 1}), ConfigError);

  std::mt19937_64 rng(5);
  auto r = random_tensor({2, 3, 11, 2}, rng, false);
  auto yr = max_pool2d(r, {2, 3}, {1, 2});
  const std::size_t HO = 2, WO = 5;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < HO; ++i)
      for (std::size_t j = 0; j < WO; ++j)
        for (std::size_t d = 0; d < 2; ++d) {
          double best = -1e300;
          for (std::size_t p = 0; p < 2; ++p)
            for (std::size_t q = 0; q < 3; ++q) best = std::max(best, r[((b * 3 + i + p) * 11 + j * 2 + q) * 2 + d]);
          CHECK(yr[((b * HO + i) * WO + j) * 2 + d] == best);
        }
}

TEST_CASE("batch norm: train statistics, eval affine map, batch-size contract") {
  std::mt19937_64 rng(6);
  auto x = random_tensor({6, 1, 4, 3}, rng, false, -3.0, 5.0);
  auto scale1 = T64::full({3}, 1.0), shift0 = T64::zeros({3});
  BatchNormStats<double> stats{{0, 0, 0}, {1, 1, 1}};
  auto y = batch_norm(x, scale1, shift0, stats, Mode::Train);
  for (std::size_t d = 0; d < 3; ++d) {
    double m = 0;
    for (std::size_t i = 0; i < 24; ++i) m += y[i * 3 + d];
    CHECK(std::abs(m / 24) < 1e-5);
  }

  BatchNormStats<double> fixed{{0.5, -1.0, 2.0}, {4.0, 0.25, 1.0}};
  auto sc = T64::from({3}, {2.0, -1.0, 0.5}), sh = T64::from({3}, {0.1, 0.2, 0.3});
  auto ye = batch_norm(x, sc, sh, fixed, Mode::Eval);
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto d = i % 3;
    double expect = (x[i] - fixed.mean[d]) / std::sqrt(fixed.var[d] + 1e-3) * sc[d] + sh[d];
    CHECK(ye[i] == doctest::Approx(expect).epsilon(1e-12));
  }

  auto one = random_tensor({1, 1, 4, 3}, rng, false);
  CHECK_THROWS_AS(batch_norm(one, scale1, shift0, stats, Mode::Train), BatchSizeError);

  auto xg = random_tensor({4, 1, 3, 2}, rng);
  auto g = random_tensor({2}, rng), b = random_tensor({2}, rng);
  auto w = random_tensor({4, 1, 3, 2}, rng, false);
  BatchNormStats<double> s2{{0, 0}, {1, 1}};
  double err = gradient_check([&] { return sum(mul(batch_norm(xg, g, b, s2, Mode::Train), w)); },
                              {xg, g, b});
  CHECK(err < 1e-4);
}

TEST_CASE("elu values and gradient") {
  auto x = T64::from({3}, {0.0, -20.0, 1.5});
  auto y = elu(x);
  CHECK(y[0] == 0.0);
  CHECK(std::abs(y[1] + 1.0) < 1e-8);
  CHECK(y[2] == 1.5);

  std::mt19937_64 rng(7);
  auto v = random_tensor({16}, rng);
  auto w = random_tensor({16}, rng, false);
  CHECK(gradient_check([&] { return sum(mul(elu(v), w)); }, {v}) < 1e-6);
}

TEST_CASE("softplus stability and identity") {
  auto y = softplus(T64::from({1}, {0.0}));
  CHECK(y[0] == doctest::Approx(0.693147).epsilon(1e-6));
  auto big = softplus(Tensor<float>::from({1}, {1000.0f}));
  CHECK(big[0] == 1000.0f);
  auto extremes = softplus(Tensor<float>::from({4}, {3.0e38f, -3.0e38f, 88.0f, -104.0f}));
  for (auto v : extremes.data()) CHECK(std::isfinite(v));

  std::mt19937_64 rng(8);
  auto z = random_tensor({64}, rng, false, -30.0, 30.0);
  auto sp = softplus(z), sn = softplus(neg(z));
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(sp[i] - sn[i] - z[i]) < 1e-6);

  auto g = random_tensor({12}, rng);
  CHECK(gradient_check([&] { return sum(softplus(g)); }, {g}) < 1e-6);
}

TEST_CASE("dense passthrough, bias and dot-product oracle") {
  std::mt19937_64 rng(9);
  auto x = random_tensor({3, 4}, rng, false);
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  auto y = dense(x, T64::from({4, 4}, eye), T64::zeros({4}));
  CHECK(max_abs_diff(y.data(), x.data()) == 0.0);

  auto bias = random_tensor({5}, rng, false);
  auto w = random_tensor({4, 5}, rng, false);
  auto yz = dense(T64::zeros({2, 4}), w, bias);
  for (std::size_t i = 0; i < 10; ++i) CHECK(yz[i] == bias[i % 5]);

  auto yr = dense(x, w, bias);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t o = 0; o < 5; ++o) {
      double acc = bias[o];
      for (std::size_t i = 0; i < 4; ++i) acc += x[b * 4 + i] * w[i * 5 + o];
      CHECK(yr[b * 5 + o] == doctest::Approx(acc).epsilon(1e-12));
    }
  CHECK_THROWS_AS(dense(x, random_tensor({3, 5}, rng), bias), ShapeError);

  auto xg = random_tensor({3, 4}, rng), wg = random_tensor({4, 5}, rng), bg = random_tensor({5}, rng);
  auto m = random_tensor({3, 5}, rng, false);
  CHECK(gradient_check([&] { return sum(mul(dense(xg, wg, bg), m)); }, {xg, wg, bg}) < 1e-6);
}

TEST_CASE("softmax cross entropy") {
  std::vector<int> labels{0, 1};
  auto eq = softmax_cross_entropy(T64::zeros({2, 2}), std::span<const int>(labels));
  CHECK(eq.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  auto margin = softmax_cross_entropy(T64::from({1, 2}, {20.0, 0.0}), T64::from({1, 2}, {1.0, 0.0}));
  CHECK(margin.item() < 1e-8);

  CHECK_THROWS_AS(softmax_cross_entropy(T64::zeros({2, 1}), T64::from({2, 1}, {1.0, 1.0})), ConfigError);
  CHECK_THROWS_AS(softmax_cross_entropy(T64::zeros({1, 3}), T64::from({1, 3}, {1.0, 1.0, 0.0})), ConfigError);

  std::mt19937_64 rng(10);
  auto logits = random_tensor({4, 3}, rng, true, -2.0, 2.0);
  std::vector<int> y{2, 0, 1, 1};
  std::span<const int> ys(y);
  {
    Tape<double> tape;
    tape.backward(softmax_cross_entropy(logits, ys));
  }
  auto p = softmax_rows(logits);
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t k = 0; k < 3; ++k) {
      double expect = (p[b * 3 + k] - (int(k) == y[b] ? 1.0 : 0.0)) / 4.0;
      CHECK(logits.grad()[b * 3 + k] == doctest::Approx(expect).epsilon(1e-12));
    }
  CHECK(gradient_check([&] { return softmax_cross_entropy(logits, ys); }, {logits}) < 1e-5);
}

TEST_CASE("dropout") {
  std::mt19937_64 rng(11);
  auto x = random_tensor({1000}, rng, false);
  for (auto mode : {Mode::Train, Mode::Eval}) {
    auto y = dropout(x, 0.0, mode, rng);
    CHECK(std::equal(y.data().begin(), y.data().end(), x.data().begin()));
  }
  auto ye = dropout(x, 0.7, Mode::Eval, rng);
  CHECK(std::equal(ye.data().begin(), ye.data().end(), x.data().begin()));
  CHECK_THROWS_AS(dropout(x, 1.0, Mode::Train, rng), ConfigError);
  CHECK_THROWS_AS(dropout(x, -0.1, Mode::Train, rng), ConfigError);

  auto ones = Tensor<float>::full({100000}, 1.0f);
  auto yt = dropout(ones, 0.5f, Mode::Train, rng);
  std::size_t kept = 0;
  for (auto v : yt.data()) {
    if (v != 0.0f) {
      ++kept;
      CHECK(v == 2.0f);
    }
  }
  CHECK(std::abs(double(kept) / 1e5 - 0.5) < 0.01);
}

TEST_CASE("gradient reversal") {
  std::mt19937_64 rng(12);
  auto x = random_tensor({7}, rng);
  auto y = gradient_reversal(x);
  CHECK(std::equal(y.data().begin(), y.data().end(), x.data().begin()));
  {
    Tape<double> tape;
    tape.backward(sum(gradient_reversal(x)));
  }
  for (auto g : x.grad()) CHECK(g == -1.0);

  // f(grl(x)) against finite differences of f alone.
  auto w = random_tensor({7}, rng, false);
  auto f = [&](const T64& v) { return sum(mul(softplus(mul(v, w)), v)); };
  x.zero_grad();
  {
    Tape<double> tape;
    tape.backward(f(gradient_reversal(x)));
  }
  std::vector<double> reversed(x.grad().begin(), x.grad().end());
  x.zero_grad();
  double err = gradient_check([&] { return f(x); }, {x});
  CHECK(err < 1e-6);
  std::vector<double> plain(x.grad().begin(), x.grad().end());
  for (std::size_t i = 0; i < plain.size(); ++i) CHECK(reversed[i] == doctest::Approx(-plain[i]).epsilon(1e-12));
}

TEST_CASE("finite differences agree for every differentiable op") {
  std::mt19937_64 rng(13);
  auto x4 = random_tensor({2, 3, 7, 2}, rng);
  auto k = random_tensor({2, 3, 2, 3}, rng);
  auto dk = random_tensor({2, 2, 2, 2}, rng);
  auto sk = random_tensor({1, 3, 2, 1}, rng);
  auto pk = random_tensor({1, 1, 2, 3}, rng);
  auto bias = random_tensor({2}, rng);

  auto probe = [&](const T64& y) {
    std::mt19937_64 wr(99);
    auto w = random_tensor(y.shape(), wr, false);
    return sum(mul(y, w));
  };
  CHECK(gradient_check([&] { return probe(conv2d(x4, k)); }, {x4, k}) < 1e-4);
  CHECK(gradient_check([&] { return probe(conv2d(x4, k, {1, 2}, Padding::Same)); }, {x4, k}) < 1e-4);
  CHECK(gradient_check([&] { return probe(depthwise_conv2d(x4, dk)); }, {x4, dk}) < 1e-4);
  CHECK(gradient_check([&] { return probe(separable_conv2d(x4, sk, pk)); }, {x4, sk, pk}) < 1e-4);
  CHECK(gradient_check([&] { return probe(add_bias(x4, bias)); }, {x4, bias}) < 1e-4);
  CHECK(gradient_check([&] { return probe(max_pool2d(x4, {1, 3}, {1, 2})); }, {x4}) < 1e-4);
  CHECK(gradient_check([&] { return probe(avg_pool2d(x4, {2, 2}, {1, 2})); }, {x4}) < 1e-4);
  CHECK(gradient_check([&] { return probe(flatten(x4)); }, {x4}) < 1e-4);
  CHECK(gradient_check([&] { return probe(slice_last(x4, 1, 2)); }, {x4}) < 1e-4);
  CHECK(gradient_check([&] { return probe(concat_last<double>({x4, elu(x4)})); }, {x4}) < 1e-4);
  std::vector<std::size_t> order{1, 0};
  CHECK(gradient_check([&] { return probe(gather_batch(x4, std::span<const std::size_t>(order))); }, {x4}) < 1e-4);

  auto v = random_tensor({3, 4}, rng);
  CHECK(gradient_check([&] { return probe(broadcast_spatial(v, 2, 3)); }, {v}) < 1e-4);
  CHECK(gradient_check([&] { return log_mean_exp(scale(v, 3.0)); }, {v}) < 1e-4);
  CHECK(gradient_check([&] { return probe(exp(v)); }, {v}) < 1e-4);
  auto pos = random_tensor({5}, rng, true, 0.5, 2.0);
  CHECK(gradient_check([&] { return probe(log(pos)); }, {pos}) < 1e-4);
  CHECK(gradient_check([&] { return mean(mul(v, v)); }, {v}) < 1e-4);
  CHECK(gradient_check([&] { return sum_squares(sub(v, scale(v, 0.3))); }, {v}) < 1e-4);
  CHECK(gradient_check([&] { return probe(add(v, neg(v))); }, {v}) < 1e-4);
}

TEST_CASE("log mean exp is stable and exact for constants") {
  auto c = T64::full({5}, 700.0);
  CHECK(log_mean_exp(c).item() == doctest::Approx(700.0).epsilon(1e-14));
  auto mixed = T64::from({2}, {0.0, std::log(3.0)});
  CHECK(log_mean_exp(mixed).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("identical seeds give bit-identical losses and gradients") {
  auto run = [] {
    std::mt19937_64 rng(21);
    auto x = random_tensor({4, 2, 9, 1}, rng, false);
    auto k = glorot_uniform<double>({2, 3, 1, 4}, 6, 24, rng);
    auto w = glorot_uniform<double>({12, 2}, 12, 2, rng);
    std::mt19937_64 drop(5);
    std::vector<int> y{0, 1, 1, 0};
    Tape<double> tape;
    auto h = dropout(elu(conv2d(x, k)), 0.5, Mode::Train, drop);
    auto loss = softmax_cross_entropy(dense(flatten(max_pool2d(h, {1, 2}, {1, 2})), w, T64()),
                                      std::span<const int>(y));
    tape.backward(loss);
    std::vector<double> out{loss.item()};
    out.insert(out.end(), k.grad().begin(), k.grad().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("glorot init bounds") {
  std::mt19937_64 rng(0);
  auto w = glorot_uniform<float>({10, 20}, 10, 20, rng);
  float bound = std::sqrt(6.0f / 30.0f);
  for (auto v : w.data()) CHECK(std::abs(v) <= bound);
  CHECK(w.requires_grad());
}
