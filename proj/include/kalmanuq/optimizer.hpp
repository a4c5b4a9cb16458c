#pragma once

#include <vector>

#include "kalmanuq/layers.hpp"

namespace kalmanuq {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment slots are allocated on first step and
// keyed by registration order, so the parameter set must not change between
// steps.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig config = {}) : config_(config) {}

  // Applies one update from the gradients accumulated in params. Parameters
  // whose gradient was never touched are left unchanged. Throws TrainError
  // on non-finite gradients.
  void step(ParameterSet& params);

  int steps_taken() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  int t_ = 0;
  std::vector<Eigen::MatrixXd> m_, v_;
};

}  // namespace kalmanuq
