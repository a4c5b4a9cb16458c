#pragma once

#include <Eigen/Dense>
#include <vector>

#include "kalmanuq/state_space.hpp"

namespace kalmanuq {

// One filter step in full: prediction, innovation statistics, gain and the
// updated posterior.
struct EkfState {
  Eigen::VectorXd x_prior;
  Eigen::MatrixXd p_prior;
  Eigen::VectorXd x_post;
  Eigen::MatrixXd p_post;
  Eigen::MatrixXd s;  // innovation covariance
  Eigen::MatrixXd k;  // gain
};

// Posterior state sequence with matching covariances, t = 1..T.
struct FilterResult {
  std::vector<Eigen::VectorXd> states;
  std::vector<Eigen::MatrixXd> covs;  // empty when no covariance is produced
};

// Solves S X = B via Cholesky. On factorization failure retries once with
// jitter 1e-9 tr(S)/n added to the diagonal, then throws NumericalError;
// also throws when the condition number exceeds 1e12.
Eigen::MatrixXd solve_spd(const Eigen::MatrixXd& s, const Eigen::MatrixXd& b);

// Prediction: x_prior = f(x_post), P_prior = F P_post F^T + Q with F the
// transition Jacobian at x_post.
void ekf_predict(const SSModelSpec& model, const Eigen::VectorXd& x_post,
                 const Eigen::MatrixXd& p_post, EkfState& out);

// Update at the predicted point: innovation covariance, gain, posterior mean
// and covariance (I - K H) P_prior, symmetrized.
void ekf_update(const SSModelSpec& model, const Eigen::VectorXd& y,
                EkfState& inout);

// Runs the filter over a trajectory of observations starting from the true
// initial state with P0 = I. Returns posteriors for t = 1..T; per-step
// internals are appended to *steps when given.
FilterResult run_ekf(const SSModelSpec& model, const Eigen::VectorXd& x0,
                     const std::vector<Eigen::VectorXd>& observations,
                     std::vector<EkfState>* steps = nullptr);

}  // namespace kalmanuq
