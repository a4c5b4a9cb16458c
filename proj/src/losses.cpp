#include "kalmanuq/losses.hpp"

#include <cmath>

#include "kalmanuq/errors.hpp"

namespace kalmanuq {

namespace {

void check_batch_shapes(const StateBatch& a, const StateBatch& b,
                        const char* what) {
  if (a.size() != b.size())
    throw ConfigError(std::string(what) + ": trajectory count mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size())
      throw ConfigError(std::string(what) + ": horizon mismatch");
    for (std::size_t t = 0; t < a[i].size(); ++t)
      if (a[i][t].size() != b[i][t].size())
        throw ConfigError(std::string(what) + ": state dimension mismatch");
  }
}

std::size_t total_steps(const StateBatch& batch) {
  std::size_t n = 0;
  for (const auto& traj : batch) n += traj.size();
  return n;
}

}  // namespace

double loss_l2(const StateBatch& predictions, const StateBatch& targets) {
  check_batch_shapes(predictions, targets, "loss_l2");
  const std::size_t steps = total_steps(predictions);
  if (steps == 0) throw ConfigError("loss_l2: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    for (std::size_t t = 0; t < predictions[i].size(); ++t)
      acc += (predictions[i][t] - targets[i][t]).squaredNorm();
  return acc / static_cast<double>(steps);
}

double loss_m2(const StateBatch& predictions, const StateBatch& targets,
               const CovBatch& predicted_covs) {
  check_batch_shapes(predictions, targets, "loss_m2");
  if (predicted_covs.size() != predictions.size())
    throw ConfigError("loss_m2: covariance trajectory count mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predicted_covs[i].size() != predictions[i].size())
      throw ConfigError("loss_m2: covariance horizon mismatch");
    for (std::size_t t = 0; t < predictions[i].size(); ++t) {
      const Eigen::VectorXd e = predictions[i][t] - targets[i][t];
      const Eigen::MatrixXd& cov = predicted_covs[i][t];
      if (cov.rows() != e.size() || cov.cols() != e.size())
        throw ConfigError("loss_m2: covariance dimension mismatch");
      for (Eigen::Index j = 0; j < e.size(); ++j)
        acc += std::abs(e(j) * e(j) - cov(j, j));
    }
  }
  return acc;
}

double loss_emp(const StateBatch& predictions, const StateBatch& targets,
                const CovBatch& predicted_covs, double beta) {
  if (beta < 0.0 || beta > 1.0)
    throw ConfigError("loss_emp: beta must be in [0, 1]");
  return (1.0 - beta) * loss_l2(predictions, targets) +
         beta * loss_m2(predictions, targets, predicted_covs);
}

double loss_gnll(const StateBatch& predictions, const StateBatch& targets,
                 const CovBatch& predicted_covs) {
  check_batch_shapes(predictions, targets, "loss_gnll");
  if (predicted_covs.size() != predictions.size())
    throw ConfigError("loss_gnll: covariance trajectory count mismatch");
  const std::size_t steps = total_steps(predictions);
  if (steps == 0) throw ConfigError("loss_gnll: empty batch");

  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predicted_covs[i].size() != predictions[i].size())
      throw ConfigError("loss_gnll: covariance horizon mismatch");
    for (std::size_t t = 0; t < predictions[i].size(); ++t) {
      const Value e =
          Value::constant(predictions[i][t] - targets[i][t]);
      const Value sigma = Value::constant(predicted_covs[i][t]);
      acc += gauss_energy(e, sigma).scalar();
    }
  }
  return acc / static_cast<double>(steps);
}

double kl_layer(double theta_norm_sq, double p, int n_inputs, double c1,
                double c2) {
  if (n_inputs <= 0) throw ConfigError("kl_layer: n_inputs must be positive");
  const double pc = std::min(std::max(p, 1e-6), 1.0 - 1e-6);
  const double entropy = -pc * std::log(pc) - (1.0 - pc) * std::log(1.0 - pc);
  return c1 * theta_norm_sq / (1.0 - pc) -
         c2 * entropy * static_cast<double>(n_inputs);
}

Value l2_term(const std::vector<Value>& predictions, const StateSeq& targets) {
  if (predictions.empty() || predictions.size() != targets.size())
    throw ConfigError("l2_term: sequence length mismatch");
  Value acc = Value::constant_scalar(0.0);
  for (std::size_t t = 0; t < predictions.size(); ++t)
    acc = acc + sum_squares(predictions[t] -
                            Value::constant(targets[t]));
  return (1.0 / static_cast<double>(predictions.size())) * acc;
}

Value m2_term(const std::vector<Value>& predictions, const StateSeq& targets,
              const std::vector<Value>& cov_diags) {
  if (predictions.empty() || predictions.size() != targets.size() ||
      predictions.size() != cov_diags.size())
    throw ConfigError("m2_term: sequence length mismatch");
  Value acc = Value::constant_scalar(0.0);
  for (std::size_t t = 0; t < predictions.size(); ++t) {
    Value e = predictions[t] - Value::constant(targets[t]);
    acc = acc + sum(abs_v(square_v(e) - cov_diags[t]));
  }
  return acc;
}

Value gnll_term(const std::vector<Value>& predictions, const StateSeq& targets,
                const std::vector<Value>& covs) {
  if (predictions.empty() || predictions.size() != targets.size() ||
      predictions.size() != covs.size())
    throw ConfigError("gnll_term: sequence length mismatch");
  Value acc = Value::constant_scalar(0.0);
  for (std::size_t t = 0; t < predictions.size(); ++t) {
    Value e = predictions[t] - Value::constant(targets[t]);
    acc = acc + gauss_energy(e, covs[t]);
  }
  return (1.0 / static_cast<double>(predictions.size())) * acc;
}

Value kl_term(const Value& weight_norm_sq, const Value& logit_p, int n_inputs,
              double c1, double c2) {
  if (n_inputs <= 0) throw ConfigError("kl_term: n_inputs must be positive");
  Value reg = c1 * cmul(weight_norm_sq, inv_keep_prob(logit_p));
  Value ent =
      (c2 * static_cast<double>(n_inputs)) * bernoulli_entropy(logit_p);
  return reg - ent;
}

}  // namespace kalmanuq
