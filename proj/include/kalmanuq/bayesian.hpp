#pragma once

#include <vector>

#include "kalmanuq/filters.hpp"

namespace kalmanuq {

// Monte Carlo dropout ensemble around a learned-gain filter: each member
// runs the full prediction chain under its own Bernoulli mask realization;
// the posterior estimate is the member mean and the error covariance the
// member scatter.

struct EnsembleConfig {
  int members = 20;
  bool per_step_masks = false;  // resample masks at every step
  int threads = 1;              // >1 splits members across worker threads
};

// Pre-draws the mask schedule of every member from a single stream, member
// by member, so the realization set is identical no matter how the run is
// parallelized afterwards.
std::vector<MaskSchedule> sample_mask_schedules(const GainNetwork& net,
                                                int members, int steps,
                                                bool per_step,
                                                RandomStream& rng);

// Mean over members, compensated summation per coordinate.
Eigen::VectorXd ensemble_mean(const std::vector<Eigen::VectorXd>& xs);

// Scatter around the given mean with 1/J normalization (a population
// covariance over the realized members, not the J-1 sample form).
Eigen::MatrixXd ensemble_cov(const std::vector<Eigen::VectorXd>& xs,
                             const Eigen::VectorXd& mean);

// Graph-side counterparts used when the ensemble statistics feed a training
// objective. The variance keeps only the diagonal.
Value graph_ensemble_mean(const std::vector<Value>& xs);
Value graph_ensemble_var_diag(const std::vector<Value>& xs, const Value& mean);

struct EnsembleRunResult {
  FilterResult combined;  // mean states with scatter covariances
  // member_states[j][t] is member j's posterior at step t+1.
  std::vector<std::vector<Eigen::VectorXd>> member_states;
};

// Runs the ensemble over one trajectory. All members start from the same
// x0; masks are pre-drawn from rng (member order) and the reduction is done
// in member order, so results do not depend on cfg.threads.
EnsembleRunResult run_dropout_ensemble(const SSModelSpec& filter_model,
                                       const Eigen::VectorXd& x0,
                                       const std::vector<Eigen::VectorXd>& obs,
                                       const GainNetwork& net,
                                       const FeatureNormalizer& norm,
                                       const EnsembleConfig& cfg,
                                       RandomStream& rng);

}  // namespace kalmanuq
