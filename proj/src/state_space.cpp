#include "kalmanuq/state_space.hpp"

#include <cmath>
#include <sstream>

#include "kalmanuq/errors.hpp"

namespace kalmanuq {

namespace {

double noise_variance_from_snr(double snr_db) {
  // snr_db = 10 log10(1 / r^2).
  return std::pow(10.0, -snr_db / 10.0);
}

constexpr double kProcessToObsRatio = 0.01;  // q^2 / r^2
constexpr double kGravity = 9.81;
constexpr double kPendulumDt = 0.01;
constexpr double kPendulumLength = 1.0;

}  // namespace

std::string to_string(ModelTag tag) {
  switch (tag) {
    case ModelTag::canonical:
      return "canonical";
    case ModelTag::pendulum:
      return "pendulum";
    case ModelTag::constant_velocity:
      return "constant_velocity";
    case ModelTag::constant_acceleration:
      return "constant_acceleration";
  }
  throw ConfigError("unknown model tag");
}

ModelTag model_tag_from_string(const std::string& s) {
  if (s == "canonical") return ModelTag::canonical;
  if (s == "pendulum") return ModelTag::pendulum;
  if (s == "constant_velocity") return ModelTag::constant_velocity;
  if (s == "constant_acceleration") return ModelTag::constant_acceleration;
  throw ConfigError("unknown model tag: " + s);
}

std::string MismatchConfig::describe() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::none:
      return "none";
    case Kind::process_noise:
      os << "process_noise x" << factor;
      return os.str();
    case Kind::observation_noise:
      os << "observation_noise x" << factor;
      return os.str();
    case Kind::evolution_model:
      return "evolution_model";
  }
  return "none";
}

MismatchConfig::Kind mismatch_kind_from_string(const std::string& s) {
  if (s == "none") return MismatchConfig::Kind::none;
  if (s == "process_noise") return MismatchConfig::Kind::process_noise;
  if (s == "observation_noise") return MismatchConfig::Kind::observation_noise;
  if (s == "evolution_model") return MismatchConfig::Kind::evolution_model;
  throw ConfigError("unknown mismatch kind: " + s);
}

void validate_model(const SSModelSpec& model) {
  if (model.state_dim <= 0 || model.obs_dim <= 0)
    throw ConfigError("model dimensions must be positive");
  if (!model.f || !model.h || !model.jac_f || !model.jac_h)
    throw ConfigError("model is missing f, h or a Jacobian");
  if (model.Q.rows() != model.state_dim || model.Q.cols() != model.state_dim)
    throw ConfigError("Q has wrong dimensions");
  if (model.R.rows() != model.obs_dim || model.R.cols() != model.obs_dim)
    throw ConfigError("R has wrong dimensions");

  // Q: PSD up to round-off.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eq(model.Q);
  const double q_scale = std::max(1.0, eq.eigenvalues().cwiseAbs().maxCoeff());
  if (eq.eigenvalues().minCoeff() < -1e-12 * q_scale)
    throw ConfigError("Q is not positive semi-definite");

  // R: SPD, checked via Cholesky.
  Eigen::LLT<Eigen::MatrixXd> lr(model.R);
  if (lr.info() != Eigen::Success)
    throw ConfigError("R is not positive definite");
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  if (es.info() != Eigen::Success)
    throw NumericalError("eigendecomposition failed in psd_sqrt");
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  Eigen::VectorXd lambda = es.eigenvalues();
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < -1e-12 * scale)
      throw NumericalError("psd_sqrt input is indefinite");
    lambda(i) = std::sqrt(std::max(lambda(i), 0.0));
  }
  return es.eigenvectors() * lambda.asDiagonal() *
         es.eigenvectors().transpose();
}

SSModelSpec make_canonical_model(double snr_db) {
  const double r2 = noise_variance_from_snr(snr_db);
  const double q2 = kProcessToObsRatio * r2;

  Eigen::Matrix2d f_raw;
  f_raw << 1.0, 1.0, 0.0, 1.0;
  const double sigma_max =
      f_raw.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV)
          .singularValues()(0);
  const Eigen::Matrix2d f_mat = f_raw / sigma_max;

  SSModelSpec m;
  m.tag = ModelTag::canonical;
  m.state_dim = 2;
  m.obs_dim = 2;
  m.snr_db = snr_db;
  m.Q = q2 * Eigen::Matrix2d::Identity();
  m.R = r2 * Eigen::Matrix2d::Identity();
  m.f = [f_mat](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return f_mat * x;
  };
  m.jac_f = [f_mat](const Eigen::VectorXd&) -> Eigen::MatrixXd {
    return f_mat;
  };
  m.h = [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x; };
  m.jac_h = [](const Eigen::VectorXd& x) -> Eigen::MatrixXd {
    return Eigen::MatrixXd::Identity(x.size(), x.size());
  };
  m.sample_x0 = [](RandomStream&) -> Eigen::VectorXd {
    return Eigen::Vector2d(1.0, 0.0);
  };
  return m;
}

SSModelSpec make_pendulum_model(double snr_db) {
  const double r2 = noise_variance_from_snr(snr_db);
  const double q2 = kProcessToObsRatio * r2;
  const double dt = kPendulumDt;
  const double g_over_l = kGravity / kPendulumLength;
  const double length = kPendulumLength;

  SSModelSpec m;
  m.tag = ModelTag::pendulum;
  m.state_dim = 2;
  m.obs_dim = 2;
  m.snr_db = snr_db;
  m.Q = q2 * Eigen::Matrix2d::Identity();
  m.R = r2 * Eigen::Matrix2d::Identity();
  m.f = [dt, g_over_l](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    Eigen::Vector2d out;
    out(0) = x(0) + x(1) * dt;
    out(1) = x(1) - g_over_l * std::sin(x(0)) * dt;
    return out;
  };
  m.jac_f = [dt, g_over_l](const Eigen::VectorXd& x) -> Eigen::MatrixXd {
    Eigen::Matrix2d j;
    j << 1.0, dt, -g_over_l * std::cos(x(0)) * dt, 1.0;
    return j;
  };
  // Cartesian tip position; depends on the angle only, so the Jacobian has a
  // zero column and rank 1.
  m.h = [length](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return Eigen::Vector2d(length * std::cos(x(0)), length * std::sin(x(0)));
  };
  m.jac_h = [length](const Eigen::VectorXd& x) -> Eigen::MatrixXd {
    Eigen::Matrix2d j;
    j << -length * std::sin(x(0)), 0.0, length * std::cos(x(0)), 0.0;
    return j;
  };
  m.sample_x0 = [](RandomStream& rng) -> Eigen::VectorXd {
    const double pi = std::acos(-1.0);
    return Eigen::Vector2d(rng.uniform_in(-pi / 2.0, pi / 2.0), 0.0);
  };
  return m;
}

namespace {

SSModelSpec make_kinematic_model(double snr_db, bool with_acceleration) {
  const double r2 = noise_variance_from_snr(snr_db);
  const double q2 = kProcessToObsRatio * r2;
  const int m_dim = with_acceleration ? 6 : 4;

  // dt = 1. Position integrates velocity (and half acceleration); velocity
  // integrates acceleration.
  Eigen::MatrixXd f_mat = Eigen::MatrixXd::Identity(m_dim, m_dim);
  f_mat(0, 2) = 1.0;
  f_mat(1, 3) = 1.0;
  if (with_acceleration) {
    f_mat(0, 4) = 0.5;
    f_mat(1, 5) = 0.5;
    f_mat(2, 4) = 1.0;
    f_mat(3, 5) = 1.0;
  }

  Eigen::MatrixXd h_mat = Eigen::MatrixXd::Zero(2, m_dim);
  h_mat(0, 0) = 1.0;
  h_mat(1, 1) = 1.0;

  SSModelSpec m;
  m.tag = with_acceleration ? ModelTag::constant_acceleration
                            : ModelTag::constant_velocity;
  m.state_dim = m_dim;
  m.obs_dim = 2;
  m.snr_db = snr_db;
  m.Q = q2 * Eigen::MatrixXd::Identity(m_dim, m_dim);
  m.R = r2 * Eigen::Matrix2d::Identity();
  m.f = [f_mat](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return f_mat * x;
  };
  m.jac_f = [f_mat](const Eigen::VectorXd&) -> Eigen::MatrixXd {
    return f_mat;
  };
  m.h = [h_mat](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return h_mat * x;
  };
  m.jac_h = [h_mat](const Eigen::VectorXd&) -> Eigen::MatrixXd {
    return h_mat;
  };
  m.sample_x0 = [m_dim](RandomStream& rng) -> Eigen::VectorXd {
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(m_dim);
    x0(2) = rng.uniform_in(-1.0, 1.0);
    x0(3) = rng.uniform_in(-1.0, 1.0);
    return x0;
  };
  return m;
}

}  // namespace

SSModelSpec make_cv_model(double snr_db) {
  return make_kinematic_model(snr_db, false);
}

SSModelSpec make_ca_model(double snr_db) {
  return make_kinematic_model(snr_db, true);
}

SSModelSpec make_model(ModelTag tag, double snr_db) {
  switch (tag) {
    case ModelTag::canonical:
      return make_canonical_model(snr_db);
    case ModelTag::pendulum:
      return make_pendulum_model(snr_db);
    case ModelTag::constant_velocity:
      return make_cv_model(snr_db);
    case ModelTag::constant_acceleration:
      return make_ca_model(snr_db);
  }
  throw ConfigError("unknown model tag");
}

std::pair<SSModelSpec, SSModelSpec> apply_mismatch(const SSModelSpec& nominal,
                                                   const MismatchConfig& cfg) {
  validate_model(nominal);
  SSModelSpec data = nominal;
  switch (cfg.kind) {
    case MismatchConfig::Kind::none:
      break;
    case MismatchConfig::Kind::process_noise:
      if (cfg.factor <= 0.0)
        throw ConfigError("mismatch factor must be positive");
      data.Q = cfg.factor * nominal.Q;
      break;
    case MismatchConfig::Kind::observation_noise:
      if (cfg.factor <= 0.0)
        throw ConfigError("mismatch factor must be positive");
      data.R = cfg.factor * nominal.R;
      break;
    case MismatchConfig::Kind::evolution_model:
      if (nominal.tag != ModelTag::constant_velocity)
        throw ConfigError(
            "evolution_model mismatch requires a constant_velocity nominal "
            "model");
      data = make_ca_model(nominal.snr_db);
      break;
  }
  return {data, nominal};
}

Eigen::VectorXd step_state(const SSModelSpec& model,
                           const Eigen::VectorXd& x_prev,
                           const Eigen::VectorXd& w) {
  Eigen::VectorXd x = model.f(x_prev) + w;
  if (!x.allFinite())
    throw SimulationError("non-finite state after transition");
  return x;
}

Eigen::VectorXd step_state(const SSModelSpec& model,
                           const Eigen::VectorXd& x_prev, RandomStream& rng) {
  const Eigen::MatrixXd l = psd_sqrt(model.Q);
  return step_state(model, x_prev, l * rng.gaussian_vector(model.state_dim));
}

Eigen::VectorXd observe(const SSModelSpec& model, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& v) {
  return model.h(x) + v;
}

Eigen::VectorXd observe(const SSModelSpec& model, const Eigen::VectorXd& x,
                        RandomStream& rng) {
  const Eigen::MatrixXd l = psd_sqrt(model.R);
  return observe(model, x, l * rng.gaussian_vector(model.obs_dim));
}

Trajectory simulate_trajectory(const SSModelSpec& model,
                               const Eigen::VectorXd& x0, int T,
                               RandomStream& rng) {
  if (T <= 0) throw ConfigError("horizon must be positive");
  if (x0.size() != model.state_dim)
    throw ConfigError("x0 has wrong dimension");

  // Factor the noise covariances once per trajectory.
  const Eigen::MatrixXd lq = psd_sqrt(model.Q);
  const Eigen::MatrixXd lr = psd_sqrt(model.R);

  Trajectory traj;
  traj.x0 = x0;
  traj.states.reserve(T);
  traj.observations.reserve(T);

  Eigen::VectorXd x = x0;
  for (int t = 1; t <= T; ++t) {
    try {
      x = step_state(model, x, lq * rng.gaussian_vector(model.state_dim));
    } catch (const SimulationError& e) {
      throw SimulationError(e.what(), t);
    }
    traj.states.push_back(x);
    traj.observations.push_back(
        observe(model, x, lr * rng.gaussian_vector(model.obs_dim)));
  }
  return traj;
}

Dataset generate_dataset(const SSModelSpec& model, int count, int T,
                         std::uint64_t master_seed) {
  if (count <= 0) throw ConfigError("dataset count must be positive");
  validate_model(model);

  Dataset ds;
  ds.model = model;
  ds.horizon = T;
  ds.seed = master_seed;
  ds.trajectories.reserve(count);
  for (int i = 0; i < count; ++i) {
    RandomStream rng(derive_seed(master_seed, static_cast<std::uint64_t>(i)));
    const Eigen::VectorXd x0 = model.sample_x0(rng);
    try {
      ds.trajectories.push_back(simulate_trajectory(model, x0, T, rng));
    } catch (const SimulationError& e) {
      throw SimulationError(e.what(), e.time_index, i);
    }
  }
  return ds;
}

Dataset project_states(const Dataset& dataset, const SSModelSpec& target) {
  const int state_dim = target.state_dim;
  if (state_dim > dataset.model.state_dim)
    throw ConfigError("cannot project to a larger state dimension");
  if (target.obs_dim != dataset.model.obs_dim)
    throw ConfigError("projection target has a different observation space");

  Dataset out = dataset;
  out.model = target;
  if (state_dim == dataset.model.state_dim) return out;
  for (auto& traj : out.trajectories) {
    traj.x0 = traj.x0.head(state_dim).eval();
    for (auto& x : traj.states) x = x.head(state_dim).eval();
  }
  return out;
}

}  // namespace kalmanuq
