#pragma once

#include <Eigen/Dense>
#include <vector>

#include "kalmanuq/autodiff.hpp"

namespace kalmanuq {

// Trajectory-major containers: outer index trajectory, inner index time.
using StateSeq = std::vector<Eigen::VectorXd>;
using CovSeq = std::vector<Eigen::MatrixXd>;
using StateBatch = std::vector<StateSeq>;
using CovBatch = std::vector<CovSeq>;

// Mean squared estimation error: mean over trajectories and time of the
// squared state error norm (coordinates summed).
double loss_l2(const StateBatch& predictions, const StateBatch& targets);

// Error variance matching term: sum over trajectories, time and coordinates
// of | e^2 - diag of predicted covariance |. Deliberately unnormalized.
double loss_m2(const StateBatch& predictions, const StateBatch& targets,
               const CovBatch& predicted_covs);

// Convex combination (1 - beta) loss_l2 + beta loss_m2. beta in [0, 1].
double loss_emp(const StateBatch& predictions, const StateBatch& targets,
                const CovBatch& predicted_covs, double beta);

// Gaussian negative log likelihood without the constant term: mean over
// trajectories and time of e^T Sigma^{-1} e + log det Sigma.
double loss_gnll(const StateBatch& predictions, const StateBatch& targets,
                 const CovBatch& predicted_covs);

// Dropout regularizer for one layer:
//   c1 ||theta||^2 / (1 - p) - c2 H(p) n_inputs
// with H the Bernoulli entropy in nats. p is clamped to [1e-6, 1 - 1e-6].
double kl_layer(double theta_norm_sq, double p, int n_inputs, double c1,
                double c2);

// Graph-valued building blocks used during training. Each covers one
// trajectory; batch composition (scaling means by the batch size, summing
// the unnormalized term) is the caller's responsibility.

// (1/T) sum_t ||pred_t - target_t||^2.
Value l2_term(const std::vector<Value>& predictions, const StateSeq& targets);

// sum_t sum_j | e_{t,j}^2 - cov_diag_{t,j} |; cov diagonals as column
// vectors.
Value m2_term(const std::vector<Value>& predictions, const StateSeq& targets,
              const std::vector<Value>& cov_diags);

// (1/T) sum_t e_t^T Sigma_t^{-1} e_t + log det Sigma_t.
Value gnll_term(const std::vector<Value>& predictions, const StateSeq& targets,
                const std::vector<Value>& covs);

// Graph form of kl_layer from the layer weight norm and the dropout logit.
Value kl_term(const Value& weight_norm_sq, const Value& logit_p, int n_inputs,
              double c1, double c2);

}  // namespace kalmanuq
