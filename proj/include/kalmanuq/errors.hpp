#pragma once

#include <stdexcept>
#include <string>

namespace kalmanuq {

// Base error carrying a stable machine-readable kind string.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

// Invalid or inconsistent configuration (dimensions, enums, unknown keys).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config", message) {}
};

// Filesystem and serialization failures.
class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io", message) {}
};

// Non-finite state during simulation. Indices are -1 when unknown at the
// throw site; outer layers rethrow with them filled in.
class SimulationError : public Error {
 public:
  SimulationError(const std::string& message, int time_index = -1,
                  int trajectory_index = -1)
      : Error("simulation", message),
        time_index(time_index),
        trajectory_index(trajectory_index) {}

  int time_index;
  int trajectory_index;
};

// Numerical failure in linear algebra (singular or ill-conditioned matrix).
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& message)
      : Error("numerical", message) {}
};

// Requested covariance cannot be recovered from the available quantities,
// typically because the observation Jacobian is rank deficient.
class UnrecoverableCovariance : public Error {
 public:
  explicit UnrecoverableCovariance(const std::string& message)
      : Error("unrecoverable_covariance", message) {}
};

// Training failure (divergence, non-finite loss or gradients).
class TrainError : public Error {
 public:
  explicit TrainError(const std::string& message, int epoch = -1)
      : Error("train", message), epoch(epoch) {}

  int epoch;
};

}  // namespace kalmanuq
