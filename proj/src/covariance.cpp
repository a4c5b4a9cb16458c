#include "kalmanuq/covariance.hpp"

#include <string>

#include "kalmanuq/errors.hpp"

namespace kalmanuq {

CovUpdateForm cov_update_form_from_string(const std::string& s) {
  if (s == "standard") return CovUpdateForm::standard;
  if (s == "joseph") return CovUpdateForm::joseph;
  throw ConfigError("unknown covariance update form: " + s);
}

std::string to_string(CovUpdateForm form) {
  return form == CovUpdateForm::standard ? "standard" : "joseph";
}

Eigen::MatrixXd extract_cov_update(const Eigen::MatrixXd& k,
                                   const Eigen::MatrixXd& h,
                                   const Eigen::MatrixXd& p_prior) {
  const Eigen::Index m = k.rows();
  if (h.cols() != m || h.rows() != k.cols() || p_prior.rows() != m ||
      p_prior.cols() != m)
    throw ConfigError("extract_cov_update: dimension mismatch");
  const Eigen::MatrixXd ikh = Eigen::MatrixXd::Identity(m, m) - k * h;
  Eigen::MatrixXd p = ikh * p_prior;
  return 0.5 * (p + p.transpose()).eval();
}

Eigen::MatrixXd extract_cov_joseph(const Eigen::MatrixXd& k,
                                   const Eigen::MatrixXd& h,
                                   const Eigen::MatrixXd& p_prior,
                                   const Eigen::MatrixXd& r) {
  const Eigen::Index m = k.rows();
  const Eigen::Index n = k.cols();
  if (h.cols() != m || h.rows() != n || p_prior.rows() != m ||
      p_prior.cols() != m || r.rows() != n || r.cols() != n)
    throw ConfigError("extract_cov_joseph: dimension mismatch");
  const Eigen::MatrixXd ikh = Eigen::MatrixXd::Identity(m, m) - k * h;
  Eigen::MatrixXd p =
      k * r * k.transpose() + ikh * p_prior * ikh.transpose();
  return 0.5 * (p + p.transpose()).eval();
}

Eigen::MatrixXd recover_prior_from_gain(const Eigen::MatrixXd& k,
                                        const Eigen::MatrixXd& h,
                                        const Eigen::MatrixXd& r) {
  const Eigen::Index m = k.rows();
  const Eigen::Index n = k.cols();
  if (h.rows() != n || h.cols() != m || r.rows() != n || r.cols() != n)
    throw ConfigError("recover_prior_from_gain: dimension mismatch");

  // Full column rank of H is required for H^T H to be invertible.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(h);
  const auto& sv = svd.singularValues();
  if (m > n || sv(sv.size() - 1) <= 1e-12 * sv(0))
    throw UnrecoverableCovariance(
        "observation Jacobian is rank deficient; prior covariance is not "
        "identifiable from the gain");

  const Eigen::MatrixXd ikh = Eigen::MatrixXd::Identity(m, m) - k * h;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd_ikh(
      ikh, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv2 = svd_ikh.singularValues();
  if (sv2(sv2.size() - 1) <= 0.0 || sv2(0) / sv2(sv2.size() - 1) > 1e12)
    throw NumericalError("I - K H is ill-conditioned; cannot invert");

  const Eigen::MatrixXd hth = h.transpose() * h;
  Eigen::MatrixXd p =
      svd_ikh.solve(k * r * h * hth.ldlt().solve(
                        Eigen::MatrixXd::Identity(m, m)));
  return 0.5 * (p + p.transpose()).eval();
}

Eigen::MatrixXd recover_prior_submatrix(const Eigen::MatrixXd& k,
                                        const Eigen::MatrixXd& h,
                                        const Eigen::MatrixXd& r,
                                        const std::vector<int>& observed_idx) {
  const Eigen::Index m = k.rows();
  const Eigen::Index n = k.cols();
  if (h.rows() != n || h.cols() != m || r.rows() != n || r.cols() != n)
    throw ConfigError("recover_prior_submatrix: dimension mismatch");
  const Eigen::Index no = static_cast<Eigen::Index>(observed_idx.size());
  if (no != n)
    throw ConfigError(
        "recover_prior_submatrix: need exactly one state index per "
        "observation");
  for (int idx : observed_idx)
    if (idx < 0 || idx >= m)
      throw ConfigError("recover_prior_submatrix: index out of range");

  // Split H into the kept block and the rest; the rest must vanish for the
  // restriction to be exact.
  Eigen::MatrixXd h_obs(n, no);
  for (Eigen::Index j = 0; j < no; ++j) h_obs.col(j) = h.col(observed_idx[j]);
  Eigen::MatrixXd h_rest = h;
  for (Eigen::Index j = 0; j < no; ++j) h_rest.col(observed_idx[j]).setZero();
  const double h_scale = std::max(1.0, h.cwiseAbs().maxCoeff());
  if (h_rest.cwiseAbs().maxCoeff() > 1e-12 * h_scale)
    throw UnrecoverableCovariance(
        "observation Jacobian is not selector-structured on the given "
        "indices");

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(h_obs);
  const auto& sv = svd.singularValues();
  if (sv(sv.size() - 1) <= 1e-12 * sv(0))
    throw UnrecoverableCovariance(
        "observed block of the Jacobian is rank deficient");

  Eigen::MatrixXd k_obs(no, n);
  for (Eigen::Index j = 0; j < no; ++j)
    k_obs.row(j) = k.row(observed_idx[j]);
  return recover_prior_from_gain(k_obs, h_obs, r);
}

}  // namespace kalmanuq
