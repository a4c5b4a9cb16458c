#include "kalmanuq/ekf.hpp"

#include "kalmanuq/errors.hpp"

namespace kalmanuq {

namespace {

void symmetrize(Eigen::MatrixXd& m) {
  m = 0.5 * (m + m.transpose()).eval();
}

}  // namespace

Eigen::MatrixXd solve_spd(const Eigen::MatrixXd& s, const Eigen::MatrixXd& b) {
  const Eigen::Index n = s.rows();
  Eigen::MatrixXd work = s;
  Eigen::LLT<Eigen::MatrixXd> llt(work);
  if (llt.info() != Eigen::Success) {
    const double jitter = 1e-9 * work.trace() / static_cast<double>(n);
    work += jitter * Eigen::MatrixXd::Identity(n, n);
    llt.compute(work);
    if (llt.info() != Eigen::Success)
      throw NumericalError("innovation covariance is not positive definite");
  }
  // Condition estimate from the symmetric eigenvalues; n is small.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(work);
  const double lmin = es.eigenvalues().minCoeff();
  const double lmax = es.eigenvalues().maxCoeff();
  if (lmin <= 0.0 || lmax / lmin > 1e12)
    throw NumericalError("innovation covariance is ill-conditioned");
  return llt.solve(b);
}

void ekf_predict(const SSModelSpec& model, const Eigen::VectorXd& x_post,
                 const Eigen::MatrixXd& p_post, EkfState& out) {
  const Eigen::MatrixXd f_jac = model.jac_f(x_post);
  out.x_prior = model.f(x_post);
  out.p_prior = f_jac * p_post * f_jac.transpose() + model.Q;
  symmetrize(out.p_prior);
}

void ekf_update(const SSModelSpec& model, const Eigen::VectorXd& y,
                EkfState& inout) {
  const Eigen::MatrixXd h_jac = model.jac_h(inout.x_prior);
  const Eigen::VectorXd y_pred = model.h(inout.x_prior);

  inout.s = h_jac * inout.p_prior * h_jac.transpose() + model.R;
  symmetrize(inout.s);
  // K = P H^T S^{-1} via S K^T = H P.
  inout.k = solve_spd(inout.s, h_jac * inout.p_prior).transpose();

  inout.x_post = inout.x_prior + inout.k * (y - y_pred);
  const Eigen::MatrixXd i =
      Eigen::MatrixXd::Identity(model.state_dim, model.state_dim);
  inout.p_post = (i - inout.k * h_jac) * inout.p_prior;
  symmetrize(inout.p_post);
}

FilterResult run_ekf(const SSModelSpec& model, const Eigen::VectorXd& x0,
                     const std::vector<Eigen::VectorXd>& observations,
                     std::vector<EkfState>* steps) {
  if (x0.size() != model.state_dim)
    throw ConfigError("run_ekf: x0 dimension mismatch");

  FilterResult result;
  result.states.reserve(observations.size());
  result.covs.reserve(observations.size());

  Eigen::VectorXd x = x0;
  Eigen::MatrixXd p =
      Eigen::MatrixXd::Identity(model.state_dim, model.state_dim);
  for (const Eigen::VectorXd& y : observations) {
    EkfState st;
    ekf_predict(model, x, p, st);
    ekf_update(model, y, st);
    x = st.x_post;
    p = st.p_post;
    result.states.push_back(x);
    result.covs.push_back(p);
    if (steps != nullptr) steps->push_back(std::move(st));
  }
  return result;
}

}  // namespace kalmanuq
