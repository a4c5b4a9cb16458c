#pragma once

#include <Eigen/Dense>
#include <vector>

namespace kalmanuq {

// Posterior covariance forms computed from a gain that need not be the
// optimal one, and recovery of the prior covariance from the gain itself.
// All matrices follow the filter convention: gain k is m x n, observation
// Jacobian h is n x m.

enum class CovUpdateForm { standard, joseph };

CovUpdateForm cov_update_form_from_string(const std::string& s);
std::string to_string(CovUpdateForm form);

// (I - K H) P_prior, symmetrized. Exact for the optimal gain; can be
// indefinite for other gains.
Eigen::MatrixXd extract_cov_update(const Eigen::MatrixXd& k,
                                   const Eigen::MatrixXd& h,
                                   const Eigen::MatrixXd& p_prior);

// Joseph form K R K^T + (I - K H) P_prior (I - K H)^T; PSD for any gain
// whenever P_prior and R are PSD.
Eigen::MatrixXd extract_cov_joseph(const Eigen::MatrixXd& k,
                                   const Eigen::MatrixXd& h,
                                   const Eigen::MatrixXd& p_prior,
                                   const Eigen::MatrixXd& r);

// Inverts the optimal-gain relation K = P H^T (H P H^T + R)^{-1} for P:
//   P = (I - K H)^{-1} K R H (H^T H)^{-1}.
// Requires H^T H invertible (full column rank). Throws
// UnrecoverableCovariance when H is rank deficient and NumericalError when
// I - K H is ill-conditioned (condition number above 1e12).
Eigen::MatrixXd recover_prior_from_gain(const Eigen::MatrixXd& k,
                                        const Eigen::MatrixXd& h,
                                        const Eigen::MatrixXd& r);

// Sub-matrix variant for selector-structured H: columns outside
// observed_idx must be zero and the kept block square and invertible. The
// same relation restricted to the observed components recovers their prior
// covariance block. Throws UnrecoverableCovariance when the kept block is
// rank deficient or the remaining columns are not zero.
Eigen::MatrixXd recover_prior_submatrix(const Eigen::MatrixXd& k,
                                        const Eigen::MatrixXd& h,
                                        const Eigen::MatrixXd& r,
                                        const std::vector<int>& observed_idx);

}  // namespace kalmanuq
