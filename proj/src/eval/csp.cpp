#include "sicr/eval/csp.hpp"

#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "sicr/errors.hpp"
#include "sicr/log.hpp"

namespace sicr::eval {

Eigen::MatrixXd trial_covariance(const signal::Trial& t) {
  Eigen::MatrixXd x(t.n_channels, t.n_times);
  for (std::size_t c = 0; c < t.n_channels; ++c) {
    for (std::size_t s = 0; s < t.n_times; ++s) x(Eigen::Index(c), Eigen::Index(s)) = t.at(c, s);
  }
  x.colwise() -= x.rowwise().mean();
  return x * x.transpose() / double(t.n_times > 1 ? t.n_times - 1 : 1);
}

CspFilters csp_filters(const Eigen::MatrixXd& cov0, const Eigen::MatrixXd& cov1, std::size_t n_filters) {
  const Eigen::Index n = cov0.rows();
  if (cov0.cols() != n || cov1.rows() != n || cov1.cols() != n) throw ShapeError("CSP covariances must be square and equal-sized");
  if (n_filters < 2) throw ConfigError("CSP needs at least 2 filters");
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov0, cov0 + cov1);
  if (solver.info() != Eigen::Success) throw NumericError("CSP generalized eigenproblem failed");
  CspFilters f;
  f.all = solver.eigenvectors();
  f.eigenvalues = solver.eigenvalues();
  const std::size_t k = std::min<std::size_t>(n_filters, std::size_t(n)) / 2;
  for (std::size_t i = 0; i < k; ++i) f.selected.push_back(i);
  for (std::size_t i = 0; i < k; ++i) f.selected.push_back(std::size_t(n) - k + i);
  return f;
}

namespace {

// Ridge when the smallest eigenvalue is negligible next to the largest.
void regularize_if_singular(Eigen::MatrixXd& cov, int cls) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  if (lo > 1e-10 * std::max(hi, 1e-300)) return;
  const double ridge = 1e-6 * cov.trace() / double(cov.rows());
  cov.diagonal().array() += ridge > 0 ? ridge : 1e-6;
  warn("CSP: class " + std::to_string(cls) + " covariance is singular; added ridge " + std::to_string(ridge));
}

}  // namespace

CspLda CspLda::fit(const std::vector<signal::Trial>& train, std::size_t n_filters) {
  if (train.empty()) throw ConfigError("CSP: empty training set");
  const Eigen::Index nc = Eigen::Index(train.front().n_channels);
  Eigen::MatrixXd cov[2] = {Eigen::MatrixXd::Zero(nc, nc), Eigen::MatrixXd::Zero(nc, nc)};
  std::size_t count[2] = {0, 0};
  for (const auto& t : train) {
    if (t.label != 0 && t.label != 1) throw ConfigError("CSP handles two classes");
    if (Eigen::Index(t.n_channels) != nc) throw ShapeError("CSP: trials differ in channel count");
    cov[t.label] += trial_covariance(t);
    ++count[t.label];
  }
  if (!count[0] || !count[1]) throw ConfigError("CSP: both classes need training trials");
  for (int c : {0, 1}) {
    cov[c] /= double(count[c]);
    regularize_if_singular(cov[c], c);
  }

  CspLda m;
  m.filters_ = csp_filters(cov[0], cov[1], n_filters);
  m.w_.resize(nc, Eigen::Index(m.filters_.selected.size()));
  for (std::size_t j = 0; j < m.filters_.selected.size(); ++j) {
    m.w_.col(Eigen::Index(j)) = m.filters_.all.col(Eigen::Index(m.filters_.selected[j]));
  }

  // Shared-covariance linear discriminant on the log-variance features.
  const Eigen::Index k = m.w_.cols();
  Eigen::VectorXd mu[2] = {Eigen::VectorXd::Zero(k), Eigen::VectorXd::Zero(k)};
  std::vector<Eigen::VectorXd> feats;
  feats.reserve(train.size());
  for (const auto& t : train) {
    feats.push_back(m.features(t));
    mu[t.label] += feats.back();
  }
  for (int c : {0, 1}) mu[c] /= double(count[c]);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(k, k);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const Eigen::VectorXd d = feats[i] - mu[train[i].label];
    s += d * d.transpose();
  }
  s /= double(train.size() > 2 ? train.size() - 2 : 1);
  s.diagonal().array() += 1e-9 * std::max(s.trace() / double(k), 1e-300);
  m.lda_w_ = s.ldlt().solve(mu[1] - mu[0]);
  m.lda_b_ = -m.lda_w_.dot(mu[0] + mu[1]) / 2 + std::log(double(count[1]) / double(count[0]));
  return m;
}

Eigen::VectorXd CspLda::features(const signal::Trial& t) const {
  const Eigen::MatrixXd cov = trial_covariance(t);
  Eigen::VectorXd f(w_.cols());
  for (Eigen::Index j = 0; j < w_.cols(); ++j) {
    f(j) = std::log(std::max(w_.col(j).dot(cov * w_.col(j)), 1e-300));
  }
  return f;
}

int CspLda::predict(const signal::Trial& t) const { return lda_w_.dot(features(t)) + lda_b_ > 0 ? 1 : 0; }

double CspLda::accuracy(const std::vector<signal::Trial>& trials) const {
  if (trials.empty()) return 0;
  std::size_t ok = 0;
  for (const auto& t : trials) ok += predict(t) == t.label;
  return double(ok) / double(trials.size());
}

double csp_lda_baseline(const std::vector<signal::Trial>& train, const std::vector<signal::Trial>& test,
                        std::size_t n_filters) {
  return CspLda::fit(train, n_filters).accuracy(test);
}

}  // namespace sicr::eval
