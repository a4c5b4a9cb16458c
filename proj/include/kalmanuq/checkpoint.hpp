#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>

#include "kalmanuq/layers.hpp"

namespace kalmanuq {

// Versioned on-disk snapshot of a trained network: a map from parameter path
// to shape and row-major values, plus non-trainable buffers (normalizer
// statistics) and free-form metadata.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  int format_version = kFormatVersion;
  std::map<std::string, Eigen::MatrixXd> params;
  std::map<std::string, Eigen::MatrixXd> buffers;
  std::map<std::string, std::string> meta;

  static Checkpoint from_params(const ParameterSet& params);
  // Writes values back into an existing parameter set; every path must match
  // an entry of identical shape and vice versa. Throws ConfigError otherwise.
  void apply_to(ParameterSet& params) const;
};

// JSON serialization. Doubles survive a round trip bit-exactly.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace kalmanuq
