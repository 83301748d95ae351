#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "sicr/signal/trial.hpp"

namespace sicr::eval {

// Mean-removed sample covariance [n_c x n_c] of one trial.
Eigen::MatrixXd trial_covariance(const signal::Trial& t);

struct CspFilters {
  // Columns solve cov0 w = lambda (cov0 + cov1) w, sorted by ascending lambda,
  // scaled so that all^T (cov0 + cov1) all = I.
  Eigen::MatrixXd all;
  Eigen::VectorXd eigenvalues;
  // Columns of `all` kept: n/2 from each end of the spectrum, n capped at n_c.
  std::vector<std::size_t> selected;
};

CspFilters csp_filters(const Eigen::MatrixXd& cov0, const Eigen::MatrixXd& cov1, std::size_t n_filters);

class CspLda {
 public:
  // Two-class training trials. Near-singular class covariances get a ridge
  // of 1e-6 * trace / n_c and a warning.
  static CspLda fit(const std::vector<signal::Trial>& train, std::size_t n_filters = 6);

  // log variance of each selected filter output
  Eigen::VectorXd features(const signal::Trial& t) const;
  int predict(const signal::Trial& t) const;
  double accuracy(const std::vector<signal::Trial>& trials) const;

  const CspFilters& filters() const { return filters_; }

 private:
  CspFilters filters_;
  Eigen::MatrixXd w_;  // selected filters, n_c x k
  Eigen::VectorXd lda_w_;
  double lda_b_ = 0;
};

double csp_lda_baseline(const std::vector<signal::Trial>& train, const std::vector<signal::Trial>& test,
                        std::size_t n_filters = 6);

}  // namespace sicr::eval
