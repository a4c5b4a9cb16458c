#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "kalmanuq/losses.hpp"

namespace kalmanuq {

// Mean squared error over trajectories and time (coordinates summed) and its
// decibel value 10 log10.
struct MseResult {
  double linear = 0.0;
  double db = 0.0;
};

MseResult compute_mse(const StateBatch& predictions, const StateBatch& targets);

// Average normalized estimation error squared: mean over trajectories and
// time of e^T Sigma^{-1} e / m. Consistent filters give 1. Sigma inversion
// uses Cholesky with one jitter retry of 1e-9 tr(Sigma)/m. log is natural.
struct AneesResult {
  double anees = 0.0;
  double log_anees = 0.0;
};

AneesResult compute_anees(const StateBatch& errors, const CovBatch& covs);

// Average predicted error covariance per time step: mean over trajectories
// of the predicted covariance at each t.
CovSeq compute_apec(const CovBatch& covs);

// Empirical error covariance per time step: mean over trajectories of the
// error outer product at each t.
CovSeq compute_eec(const StateBatch& errors);

// Wallclock latency of fn: n_warmup unrecorded calls, then the median over
// n_runs >= 10 timed calls, in milliseconds.
struct LatencyResult {
  double median_ms = 0.0;
  std::vector<double> runs_ms;
};

LatencyResult bench_latency(const std::function<void()>& fn, int n_runs = 10,
                            int n_warmup = 3);

// Evaluation summary for one filter on one test set.
struct EvalReport {
  std::string filter;
  std::string model_tag;
  double snr_db = 0.0;
  int count = 0;
  int horizon = 0;
  double mse_db = 0.0;
  double mse_linear = 0.0;
  // NaN when the filter produces no covariance.
  double anees = 0.0;
  double log_anees = 0.0;
  double latency_ms = 0.0;

  std::string to_json() const;
};

}  // namespace kalmanuq
