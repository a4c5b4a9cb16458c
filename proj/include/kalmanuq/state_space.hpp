#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "kalmanuq/random.hpp"

namespace kalmanuq {

enum class ModelTag {
  canonical,
  pendulum,
  constant_velocity,
  constant_acceleration,
};

std::string to_string(ModelTag tag);
ModelTag model_tag_from_string(const std::string& s);

// Discrete-time state space model
//   x_t = f(x_{t-1}) + w_t,  w_t ~ N(0, Q)
//   y_t = h(x_t) + v_t,      v_t ~ N(0, R)
// with analytic Jacobians of f and h. Q must be PSD, R must be SPD.
struct SSModelSpec {
  ModelTag tag = ModelTag::canonical;
  int state_dim = 0;
  int obs_dim = 0;

  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> f;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> h;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jac_f;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jac_h;

  Eigen::MatrixXd Q;
  Eigen::MatrixXd R;

  // Inverse observation noise variance in dB (10 log10 of n / Tr(R)) used to
  // construct R; kept for dataset metadata.
  double snr_db = 0.0;

  // Scenario-specific initial state distribution.
  std::function<Eigen::VectorXd(RandomStream&)> sample_x0;
};

// Throws ConfigError if dimensions are inconsistent, Q is not PSD or R is not
// SPD (checked via Cholesky / eigenvalues).
void validate_model(const SSModelSpec& model);

// Symmetric PSD square root A^{1/2}; used to color noise when a Cholesky
// factor does not exist (singular Q). Throws NumericalError for indefinite
// input beyond round-off.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a);

// One trajectory of length T. states[t-1] holds x_t and observations[t-1]
// holds y_t for t = 1..T; the initial condition is stored separately.
struct Trajectory {
  Eigen::VectorXd x0;
  std::vector<Eigen::VectorXd> states;
  std::vector<Eigen::VectorXd> observations;

  int horizon() const { return static_cast<int>(states.size()); }
};

// Systematic model error injected into the data-generating model while the
// filter keeps the nominal one.
struct MismatchConfig {
  enum class Kind { none, process_noise, observation_noise, evolution_model };

  Kind kind = Kind::none;
  // Multiplies Q (process_noise) or R (observation_noise). Ignored for
  // evolution_model, which swaps the generator for the augmented model.
  double factor = 1.0;

  std::string describe() const;
};

MismatchConfig::Kind mismatch_kind_from_string(const std::string& s);

struct Dataset {
  SSModelSpec model;  // data-generating model
  std::vector<Trajectory> trajectories;
  int horizon = 0;
  std::uint64_t seed = 0;
  MismatchConfig mismatch;

  int count() const { return static_cast<int>(trajectories.size()); }
};

// Scenario factories. snr_db sets r^2 = 10^(-snr_db/10), R = r^2 I and
// Q = 0.01 r^2 I.

// Linear 2x2 model with transition [[1,1],[0,1]] rescaled to unit largest
// singular value, H = I. x0 fixed at [1, 0].
SSModelSpec make_canonical_model(double snr_db);

// Euler-discretized pendulum, dt = 0.01, unit length, g = 9.81. Observation
// is the Cartesian tip position, whose Jacobian has rank 1.
// x0 = [U(-pi/2, pi/2), 0].
SSModelSpec make_pendulum_model(double snr_db);

// Constant-velocity kinematics [px, py, vx, vy], dt = 1, position-only
// observation. x0 = [0, 0, U(-1,1), U(-1,1)].
SSModelSpec make_cv_model(double snr_db);

// Constant-acceleration kinematics [px, py, vx, vy, ax, ay], dt = 1, same
// position-only observation as the constant-velocity model. Used only to
// generate evolution-mismatched data. x0 = [0, 0, U(-1,1), U(-1,1), 0, 0].
SSModelSpec make_ca_model(double snr_db);

SSModelSpec make_model(ModelTag tag, double snr_db);

// Returns (data model, filter model). The filter model is always the nominal
// one. evolution_model requires a constant-velocity nominal model and throws
// ConfigError otherwise.
std::pair<SSModelSpec, SSModelSpec> apply_mismatch(const SSModelSpec& nominal,
                                                   const MismatchConfig& cfg);

// Deterministic transition given additive process noise w: f(x_prev) + w.
// Throws SimulationError (time index unknown) on non-finite output.
Eigen::VectorXd step_state(const SSModelSpec& model,
                           const Eigen::VectorXd& x_prev,
                           const Eigen::VectorXd& w);

// Stochastic transition, w = Q^{1/2} xi with xi drawn from rng.
Eigen::VectorXd step_state(const SSModelSpec& model,
                           const Eigen::VectorXd& x_prev, RandomStream& rng);

// Observation given additive noise v: h(x) + v.
Eigen::VectorXd observe(const SSModelSpec& model, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& v);

// Stochastic observation, v = R^{1/2} zeta with zeta drawn from rng.
Eigen::VectorXd observe(const SSModelSpec& model, const Eigen::VectorXd& x,
                        RandomStream& rng);

// Rolls the model forward T steps from x0. Per step draws process noise
// first, then observation noise. Throws SimulationError with the failing
// time index on non-finite states.
Trajectory simulate_trajectory(const SSModelSpec& model,
                               const Eigen::VectorXd& x0, int T,
                               RandomStream& rng);

// count independent trajectories with per-trajectory seeds derived from
// master_seed; trajectory i is reproducible in isolation from
// derive_seed(master_seed, i). x0 is drawn from the model's initial state
// distribution before the noise stream is consumed.
Dataset generate_dataset(const SSModelSpec& model, int count, int T,
                         std::uint64_t master_seed);

// Re-expresses the dataset in the target model's state coordinates by
// keeping the leading components of every state (and x0); observations are
// unchanged and the stored model becomes target. Used for evolution-model
// mismatch, where the augmented generator shares its leading block with the
// filter model. Requires target.state_dim <= dataset state dimension.
Dataset project_states(const Dataset& dataset, const SSModelSpec& target);

}  // namespace kalmanuq
