#include "kalmanuq/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <nlohmann/json.hpp>

#include "kalmanuq/errors.hpp"

namespace kalmanuq {

MseResult compute_mse(const StateBatch& predictions,
                      const StateBatch& targets) {
  MseResult r;
  r.linear = loss_l2(predictions, targets);
  r.db = 10.0 * std::log10(r.linear);
  return r;
}

AneesResult compute_anees(const StateBatch& errors, const CovBatch& covs) {
  if (errors.empty() || errors.size() != covs.size())
    throw ConfigError("compute_anees: batch size mismatch");

  double acc = 0.0;
  std::size_t steps = 0;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (errors[i].size() != covs[i].size())
      throw ConfigError("compute_anees: horizon mismatch");
    for (std::size_t t = 0; t < errors[i].size(); ++t) {
      const Eigen::VectorXd& e = errors[i][t];
      const Eigen::Index m = e.size();
      Eigen::MatrixXd sigma = covs[i][t];
      if (sigma.rows() != m || sigma.cols() != m)
        throw ConfigError("compute_anees: covariance dimension mismatch");

      Eigen::LLT<Eigen::MatrixXd> llt(sigma);
      if (llt.info() != Eigen::Success) {
        const double jitter = 1e-9 * sigma.trace() / static_cast<double>(m);
        sigma += jitter * Eigen::MatrixXd::Identity(m, m);
        llt.compute(sigma);
        if (llt.info() != Eigen::Success)
          throw NumericalError(
              "compute_anees: covariance is not positive definite");
      }
      acc += e.dot(llt.solve(e)) / static_cast<double>(m);
      ++steps;
    }
  }
  if (steps == 0) throw ConfigError("compute_anees: empty batch");

  AneesResult r;
  r.anees = acc / static_cast<double>(steps);
  r.log_anees = std::log(r.anees);
  return r;
}

CovSeq compute_apec(const CovBatch& covs) {
  if (covs.empty()) throw ConfigError("compute_apec: empty batch");
  const std::size_t horizon = covs.front().size();
  CovSeq out(horizon);
  for (const auto& traj : covs)
    if (traj.size() != horizon)
      throw ConfigError("compute_apec: horizon mismatch");
  for (std::size_t t = 0; t < horizon; ++t) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(covs.front()[t].rows(),
                                                covs.front()[t].cols());
    for (const auto& traj : covs) acc += traj[t];
    out[t] = acc / static_cast<double>(covs.size());
  }
  return out;
}

CovSeq compute_eec(const StateBatch& errors) {
  if (errors.empty()) throw ConfigError("compute_eec: empty batch");
  const std::size_t horizon = errors.front().size();
  for (const auto& traj : errors)
    if (traj.size() != horizon)
      throw ConfigError("compute_eec: horizon mismatch");
  CovSeq out(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    const Eigen::Index m = errors.front()[t].size();
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(m, m);
    for (const auto& traj : errors)
      acc += traj[t] * traj[t].transpose();
    out[t] = acc / static_cast<double>(errors.size());
  }
  return out;
}

LatencyResult bench_latency(const std::function<void()>& fn, int n_runs,
                            int n_warmup) {
  if (n_runs < 10) throw ConfigError("bench_latency: need at least 10 runs");
  for (int i = 0; i < n_warmup; ++i) fn();

  LatencyResult r;
  r.runs_ms.reserve(n_runs);
  for (int i = 0; i < n_runs; ++i) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    const auto end = std::chrono::steady_clock::now();
    r.runs_ms.push_back(
        std::chrono::duration<double, std::milli>(end - start).count());
  }
  std::vector<double> sorted = r.runs_ms;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  r.median_ms = (n % 2 == 1) ? sorted[n / 2]
                             : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return r;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["filter"] = filter;
  j["model_tag"] = model_tag;
  j["snr_db"] = snr_db;
  j["count"] = count;
  j["horizon"] = horizon;
  j["mse_db"] = mse_db;
  j["mse_linear"] = mse_linear;
  if (std::isnan(anees)) {
    j["anees"] = nullptr;
    j["log_anees"] = nullptr;
  } else {
    j["anees"] = anees;
    j["log_anees"] = log_anees;
  }
  j["latency_ms"] = latency_ms;
  return j.dump(2);
}

}  // namespace kalmanuq
