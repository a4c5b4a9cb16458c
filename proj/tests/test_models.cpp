#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "kalmanuq/dataset_io.hpp"
#include "kalmanuq/errors.hpp"
#include "kalmanuq/random.hpp"
#include "kalmanuq/state_space.hpp"

using namespace kalmanuq;

namespace {

Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& fn,
                            const Eigen::VectorXd& x, double h = 1e-6) {
  const Eigen::VectorXd y0 = fn(x);
  Eigen::MatrixXd j(y0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    j.col(i) = (fn(xp) - fn(xm)) / (2.0 * h);
  }
  return j;
}

}  // namespace

TEST_CASE("linear benchmark transition is the unit-spectral-norm rescaling") {
  // Largest singular value of [[1,1],[0,1]] is the golden ratio; reference
  // entries computed independently with numpy.
  const double inv_phi = 0.6180339887498948;
  SSModelSpec m = make_canonical_model(0.0);
  Eigen::MatrixXd f = m.jac_f(Eigen::Vector2d::Zero());
  CHECK(f(0, 0) == doctest::Approx(inv_phi).epsilon(1e-14));
  CHECK(f(0, 1) == doctest::Approx(inv_phi).epsilon(1e-14));
  CHECK(f(1, 0) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(f(1, 1) == doctest::Approx(inv_phi).epsilon(1e-14));
  const double smax = f.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV)
                          .singularValues()(0);
  CHECK(smax == doctest::Approx(1.0).epsilon(1e-12));

  // Ten noise-free steps from [1, 0.5]; numpy matrix-power reference.
  Eigen::VectorXd x(2);
  x << 1.0, 0.5;
  const Eigen::VectorXd w = Eigen::Vector2d::Zero();
  for (int t = 0; t < 10; ++t) x = step_state(m, x, w);
  CHECK(x(0) == doctest::Approx(0.04878371253470005).epsilon(1e-12));
  CHECK(x(1) == doctest::Approx(0.0040653093778916715).epsilon(1e-12));
}

TEST_CASE("noise scales follow the configured signal-to-noise ratio") {
  SSModelSpec m = make_canonical_model(-10.0);
  CHECK(m.R(0, 0) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(m.Q(0, 0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(m.R(0, 1) == 0.0);
  SSModelSpec m2 = make_pendulum_model(20.0);
  CHECK(m2.R(1, 1) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(m2.Q(1, 1) == doctest::Approx(1e-4).epsilon(1e-12));
}

TEST_CASE("pendulum step matches the hand-computed Euler update") {
  SSModelSpec m = make_pendulum_model(0.0);
  Eigen::VectorXd x(2);
  x << 0.5, 0.3;
  // theta' = 0.5 + 0.3 * 0.01, omega' = 0.3 - 9.81 * sin(0.5) * 0.01.
  Eigen::VectorXd xn = m.f(x);
  CHECK(xn(0) == doctest::Approx(0.503).epsilon(1e-14));
  CHECK(xn(1) == doctest::Approx(0.25296835466292766).epsilon(1e-13));

  Eigen::VectorXd y = m.h(x);
  CHECK(y(0) == doctest::Approx(0.8775825618903728).epsilon(1e-14));
  CHECK(y(1) == doctest::Approx(0.479425538604203).epsilon(1e-14));

  Eigen::MatrixXd jf = m.jac_f(x);
  CHECK(jf(0, 1) == doctest::Approx(0.01).epsilon(1e-14));
  CHECK(jf(1, 0) == doctest::Approx(-0.08609084932144556).epsilon(1e-13));

  // Tip position ignores the angular rate, so that Jacobian column is zero.
  Eigen::MatrixXd jh = m.jac_h(x);
  CHECK(jh(0, 1) == 0.0);
  CHECK(jh(1, 1) == 0.0);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(jh);
  CHECK(svd.singularValues()(1) < 1e-12);
}

TEST_CASE("model Jacobians agree with central differences") {
  RandomStream rng(7);
  for (ModelTag tag : {ModelTag::canonical, ModelTag::pendulum,
                       ModelTag::constant_velocity,
                       ModelTag::constant_acceleration}) {
    SSModelSpec m = make_model(tag, 0.0);
    for (int rep = 0; rep < 5; ++rep) {
      Eigen::VectorXd x = rng.gaussian_vector(m.state_dim);
      Eigen::MatrixXd jf = m.jac_f(x);
      Eigen::MatrixXd jf_fd = fd_jacobian(m.f, x);
      CHECK((jf - jf_fd).cwiseAbs().maxCoeff() < 1e-7);
      Eigen::MatrixXd jh = m.jac_h(x);
      Eigen::MatrixXd jh_fd = fd_jacobian(m.h, x);
      CHECK((jh - jh_fd).cwiseAbs().maxCoeff() < 1e-7);
    }
  }
}

TEST_CASE("kinematic generator with zeroed acceleration replays the reduced model") {
  // Same noise realization fed to both models, acceleration channels forced
  // to zero: the six-state rollout must coincide with the four-state one on
  // the shared components.
  SSModelSpec ca = make_ca_model(0.0);
  SSModelSpec cv = make_cv_model(0.0);
  RandomStream rng(11);
  Eigen::VectorXd x6 = Eigen::VectorXd::Zero(6);
  Eigen::VectorXd x4 = Eigen::VectorXd::Zero(4);
  x6(2) = x4(2) = 0.3;
  x6(3) = x4(3) = -0.7;
  for (int t = 0; t < 25; ++t) {
    Eigen::VectorXd xi = rng.gaussian_vector(6);
    xi(4) = 0.0;
    xi(5) = 0.0;
    const double q = std::sqrt(ca.Q(0, 0));
    Eigen::VectorXd w6 = q * xi;
    Eigen::VectorXd w4 = q * xi.head(4);
    x6 = step_state(ca, x6, w6);
    x4 = step_state(cv, x4, w4);
    for (int i = 0; i < 4; ++i) CHECK(x6(i) == doctest::Approx(x4(i)).epsilon(1e-15));
    CHECK(x6(4) == 0.0);
    CHECK(x6(5) == 0.0);
  }
}

TEST_CASE("initial states come from the documented distributions") {
  RandomStream rng(3);
  SSModelSpec canon = make_canonical_model(0.0);
  Eigen::VectorXd x0 = canon.sample_x0(rng);
  CHECK(x0(0) == 1.0);
  CHECK(x0(1) == 0.0);

  SSModelSpec cv = make_cv_model(0.0);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::VectorXd v = cv.sample_x0(rng);
    CHECK(v(0) == 0.0);
    CHECK(v(1) == 0.0);
    CHECK(std::abs(v(2)) <= 1.0);
    CHECK(std::abs(v(3)) <= 1.0);
  }
  SSModelSpec pend = make_pendulum_model(0.0);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::VectorXd v = pend.sample_x0(rng);
    CHECK(std::abs(v(0)) <= std::acos(-1.0) / 2.0);
    CHECK(v(1) == 0.0);
  }
}

TEST_CASE("trajectories are reproducible per index from the master seed") {
  SSModelSpec m = make_pendulum_model(10.0);
  Dataset d = generate_dataset(m, 4, 12, 99);
  REQUIRE(d.count() == 4);
  REQUIRE(d.horizon == 12);

  // Trajectory i must be recomputable in isolation.
  for (int i : {0, 2, 3}) {
    RandomStream rng(derive_seed(99, static_cast<std::uint64_t>(i)));
    Eigen::VectorXd x0 = m.sample_x0(rng);
    Trajectory t = simulate_trajectory(m, x0, 12, rng);
    CHECK(t.x0 == d.trajectories[i].x0);
    for (int k = 0; k < 12; ++k) {
      CHECK(t.states[k] == d.trajectories[i].states[k]);
      CHECK(t.observations[k] == d.trajectories[i].observations[k]);
    }
  }

  // Different master seed changes the draw.
  Dataset d2 = generate_dataset(m, 4, 12, 100);
  CHECK(d.trajectories[0].states[0] != d2.trajectories[0].states[0]);
}

TEST_CASE("divergent dynamics raise a simulation error with context") {
  SSModelSpec m = make_canonical_model(0.0);
  m.f = [](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return 1e200 * x.array().square().matrix();
  };
  m.jac_f = [](const Eigen::VectorXd& x) -> Eigen::MatrixXd {
    return Eigen::MatrixXd::Identity(x.size(), x.size());
  };
  RandomStream rng(1);
  Eigen::Vector2d x0(10.0, 10.0);
  CHECK_THROWS_AS(simulate_trajectory(m, x0, 20, rng), SimulationError);
}

TEST_CASE("mismatch scales only the generator side") {
  SSModelSpec nominal = make_canonical_model(0.0);
  MismatchConfig mc;
  mc.kind = MismatchConfig::Kind::process_noise;
  mc.factor = 100.0;
  auto [data_model, filter_model] = apply_mismatch(nominal, mc);
  CHECK(data_model.Q(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(filter_model.Q(0, 0) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(data_model.R(0, 0) == doctest::Approx(filter_model.R(0, 0)).epsilon(1e-15));

  mc.kind = MismatchConfig::Kind::observation_noise;
  auto [dm2, fm2] = apply_mismatch(nominal, mc);
  CHECK(dm2.R(0, 0) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(fm2.R(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(dm2.Q(0, 0) == doctest::Approx(fm2.Q(0, 0)).epsilon(1e-15));
}

TEST_CASE("evolution mismatch swaps in the wider generator for kinematics only") {
  SSModelSpec cv = make_cv_model(0.0);
  MismatchConfig mc;
  mc.kind = MismatchConfig::Kind::evolution_model;
  auto [data_model, filter_model] = apply_mismatch(cv, mc);
  CHECK(data_model.state_dim == 6);
  CHECK(filter_model.state_dim == 4);
  CHECK(data_model.obs_dim == 2);

  SSModelSpec canon = make_canonical_model(0.0);
  CHECK_THROWS_AS(apply_mismatch(canon, mc), ConfigError);
}

TEST_CASE("state projection keeps leading coordinates and observations") {
  SSModelSpec ca = make_ca_model(0.0);
  SSModelSpec cv = make_cv_model(0.0);
  Dataset d = generate_dataset(ca, 2, 6, 5);
  Dataset p = project_states(d, cv);
  CHECK(p.model.state_dim == 4);
  CHECK(p.count() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(p.trajectories[i].x0.size() == 4);
    CHECK(p.trajectories[i].x0 == d.trajectories[i].x0.head(4));
    for (int t = 0; t < 6; ++t) {
      CHECK(p.trajectories[i].states[t] == d.trajectories[i].states[t].head(4));
      CHECK(p.trajectories[i].observations[t] == d.trajectories[i].observations[t]);
    }
  }
}

TEST_CASE("dataset survives a CSV round trip bit-exactly") {
  namespace fs = std::filesystem;
  SSModelSpec m = make_cv_model(10.0);
  Dataset d = generate_dataset(m, 3, 7, 21);
  d.mismatch.kind = MismatchConfig::Kind::process_noise;
  d.mismatch.factor = 100.0;

  const std::string path = (fs::temp_directory_path() / "kuq_ds_test.csv").string();
  write_dataset_csv(d, path);
  Dataset r = read_dataset_csv(path);
  CHECK(r.count() == d.count());
  CHECK(r.horizon == d.horizon);
  CHECK(r.seed == d.seed);
  CHECK(r.model.tag == d.model.tag);
  CHECK(r.model.snr_db == d.model.snr_db);
  CHECK(r.mismatch.kind == d.mismatch.kind);
  for (int i = 0; i < d.count(); ++i) {
    CHECK(r.trajectories[i].x0 == d.trajectories[i].x0);
    for (int t = 0; t < d.horizon; ++t) {
      CHECK(r.trajectories[i].states[t] == d.trajectories[i].states[t]);
      CHECK(r.trajectories[i].observations[t] == d.trajectories[i].observations[t]);
    }
  }
  fs::remove(path);
  fs::remove(sidecar_path(path));

  CHECK_THROWS_AS(read_dataset_csv("/nonexistent/nowhere.csv"), IoError);
}

TEST_CASE("seed derivation separates streams and stays stable") {
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 2, 4));
  // Identical uniform draws for identical seeds.
  RandomStream a(42), b(42), c(43);
  CHECK(a.uniform() == b.uniform());
  CHECK(a.gaussian() == b.gaussian());
  CHECK(a.uniform() != c.uniform());
}
