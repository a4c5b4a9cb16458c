#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "kalmanuq/errors.hpp"
#include "kalmanuq/metrics.hpp"
#include "kalmanuq/training.hpp"

using namespace kalmanuq;

namespace {

TrainConfig quick_config(FilterVariant v, int epochs = 3) {
  TrainConfig cfg;
  cfg.variant = v;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.learning_rate = 5e-3;
  cfg.val_fraction = 0.25;
  cfg.seed = 2024;
  cfg.ensemble_members = 3;
  cfg.train_ensemble_size = 2;
  return cfg;
}

double mse_on(const TrainedFilter& tf, const Trajectory& traj) {
  FilterResult res = tf.run(traj, 5);
  StateSeq pred(res.states.begin(), res.states.end());
  StateSeq truth(traj.states.begin(), traj.states.end());
  return compute_mse({pred}, {truth}).linear;
}

}  // namespace

TEST_CASE("calibration weight ramps linearly over the first part of training") {
  TrainConfig cfg;
  cfg.epochs = 10;
  CHECK(cfg.beta_at(0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(cfg.beta_at(5) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(cfg.beta_at(9) == doctest::Approx(0.9).epsilon(1e-12));
  // Halfway up the ramp.
  CHECK(cfg.beta_at(2) == doctest::Approx(0.1 + 0.8 * 2.0 / 5.0).epsilon(1e-12));
  TrainConfig one;
  one.epochs = 1;
  CHECK(one.beta_at(0) == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("objectives default per variant") {
  CHECK(default_objective(FilterVariant::knet_kg) == TrainObjective::l2);
  CHECK(default_objective(FilterVariant::skn) == TrainObjective::gnll);
  CHECK(default_objective(FilterVariant::blackbox) == TrainObjective::gnll);
  CHECK(default_objective(FilterVariant::bkn) == TrainObjective::elbo);
  CHECK_THROWS_AS(default_objective(FilterVariant::ekf), ConfigError);
  for (TrainObjective o : {TrainObjective::l2, TrainObjective::m2,
                           TrainObjective::emp, TrainObjective::gnll,
                           TrainObjective::elbo}) {
    CHECK(train_objective_from_string(to_string(o)) == o);
  }
}

TEST_CASE("fresh networks are reproducible from the config seed") {
  SSModelSpec m = make_canonical_model(0.0);
  TrainConfig cfg = quick_config(FilterVariant::knet_kg);
  TrainedFilter a = build_untrained(m, cfg);
  TrainedFilter b = build_untrained(m, cfg);
  REQUIRE(a.gain_net() != nullptr);
  const auto ea = a.gain_net()->params().entries();
  const auto eb = b.gain_net()->params().entries();
  REQUIRE(ea.size() == eb.size());
  for (std::size_t i = 0; i < ea.size(); ++i) {
    CHECK(ea[i].path == eb[i].path);
    CHECK(ea[i].var.value() == eb[i].var.value());
  }

  cfg.seed = 2025;
  TrainedFilter c = build_untrained(m, cfg);
  bool all_same = true;
  const auto ec = c.gain_net()->params().entries();
  for (std::size_t i = 0; i < ea.size(); ++i)
    if (ea[i].var.value() != ec[i].var.value()) all_same = false;
  CHECK(!all_same);

  // The dropout variant draws its initial drop probabilities from the
  // configured range; the frequentist variants start at (numerically) zero.
  TrainedFilter bkn = build_untrained(m, quick_config(FilterVariant::bkn));
  const double p_in = bkn.gain_net()->dropout_input().p();
  const double p_hid = bkn.gain_net()->dropout_hidden().p();
  CHECK(p_in >= 0.5);
  CHECK(p_in <= 0.8);
  CHECK(p_hid >= 0.5);
  CHECK(p_hid <= 0.8);
  CHECK(p_in != p_hid);
  CHECK(a.gain_net()->dropout_input().p() < 1e-9);
}

TEST_CASE("wrapped model-based filter matches the direct run") {
  SSModelSpec m = make_pendulum_model(0.0);
  RandomStream rng(31);
  Trajectory traj = simulate_trajectory(m, m.sample_x0(rng), 20, rng);
  TrainedFilter tf = TrainedFilter::make_ekf(m);
  CHECK(tf.variant() == FilterVariant::ekf);
  CHECK(tf.produces_covariance());
  FilterResult a = tf.run(traj);
  FilterResult b = run_ekf(m, traj.x0, traj.observations);
  for (std::size_t t = 0; t < a.states.size(); ++t) {
    CHECK(a.states[t] == b.states[t]);
    CHECK(a.covs[t] == b.covs[t]);
  }
}

TEST_CASE("a few epochs of gain training improve over the fresh network") {
  SSModelSpec m = make_canonical_model(0.0);
  Dataset data = generate_dataset(m, 16, 15, 7);
  TrainConfig cfg = quick_config(FilterVariant::knet_kg, 6);
  TrainResult result = train_filter(m, data, cfg);

  REQUIRE(result.log.size() <= 6);
  REQUIRE(!result.log.empty());
  for (std::size_t i = 0; i < result.log.size(); ++i) {
    const TrainLogRow& row = result.log[i];
    CHECK(row.epoch == static_cast<int>(i) + 1);
    CHECK(std::isfinite(row.train_loss));
    CHECK(std::isfinite(row.val_loss));
    CHECK(std::isfinite(row.val_mse_db));
    CHECK(row.beta == doctest::Approx(cfg.beta_at(static_cast<int>(i))));
    if (i > 0) CHECK(row.wallclock_s >= result.log[i - 1].wallclock_s);
  }
  CHECK(result.best_epoch >= 1);
  CHECK(result.best_epoch <= static_cast<int>(result.log.size()));
  CHECK(result.best_val_loss == doctest::Approx(result.log[result.best_epoch - 1].val_loss));

  RandomStream rng(99);
  Trajectory probe = simulate_trajectory(m, m.sample_x0(rng), 15, rng);
  TrainedFilter fresh = build_untrained(m, cfg);
  CHECK(mse_on(result.filter, probe) < mse_on(fresh, probe));

  // The trained gain filter extracts covariances on this model.
  CHECK(result.filter.produces_covariance());
  FilterResult run = result.filter.run(probe, 1);
  CHECK(run.covs.size() == 15);
}

TEST_CASE("training is deterministic given the seed") {
  SSModelSpec m = make_canonical_model(0.0);
  Dataset data = generate_dataset(m, 10, 10, 17);
  TrainConfig cfg = quick_config(FilterVariant::knet_kg, 2);
  TrainResult a = train_filter(m, data, cfg);
  TrainResult b = train_filter(m, data, cfg);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].train_loss == b.log[i].train_loss);
    CHECK(a.log[i].val_loss == b.log[i].val_loss);
  }
  const auto pa = a.filter.gain_net()->params().snapshot();
  const auto pb = b.filter.gain_net()->params().snapshot();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
}

TEST_CASE("checkpoints reload into an identical filter") {
  namespace fs = std::filesystem;
  SSModelSpec m = make_canonical_model(0.0);
  Dataset data = generate_dataset(m, 8, 10, 23);
  TrainConfig cfg = quick_config(FilterVariant::bkn, 2);
  TrainResult result = train_filter(m, data, cfg);

  const std::string path = (fs::temp_directory_path() / "kuq_ckpt_test.json").string();
  result.filter.save(path);
  TrainedFilter loaded = TrainedFilter::load(path);
  CHECK(loaded.variant() == FilterVariant::bkn);
  CHECK(loaded.ensemble().members == cfg.ensemble_members);
  CHECK(loaded.normalizer().fitted());

  RandomStream rng(41);
  Trajectory probe = simulate_trajectory(m, m.sample_x0(rng), 12, rng);
  FilterResult ra = result.filter.run(probe, 77);
  FilterResult rb = loaded.run(probe, 77);
  REQUIRE(ra.states.size() == rb.states.size());
  for (std::size_t t = 0; t < ra.states.size(); ++t) {
    CHECK(ra.states[t] == rb.states[t]);
    CHECK(ra.covs[t] == rb.covs[t]);
  }
  fs::remove(path);
  CHECK_THROWS_AS(TrainedFilter::load("/nonexistent/ckpt.json"), IoError);
}

TEST_CASE("pooled training across noise levels keeps the first model as default") {
  SSModelSpec m0 = make_canonical_model(0.0);
  SSModelSpec m10 = make_canonical_model(10.0);
  Dataset d0 = generate_dataset(m0, 6, 10, 31);
  Dataset d10 = generate_dataset(m10, 6, 10, 32);
  TrainConfig cfg = quick_config(FilterVariant::knet_kg, 2);
  TrainResult result = train_filter_multi({m0, m10}, {d0, d10}, cfg);
  CHECK(result.filter.filter_model().snr_db == 0.0);

  RandomStream rng(43);
  Trajectory probe10 = simulate_trajectory(m10, m10.sample_x0(rng), 10, rng);
  FilterResult at10 = result.filter.run(m10, probe10, 3);
  CHECK(at10.states.size() == 10);

  CHECK_THROWS_AS(train_filter_multi({m0}, {d0, d10}, cfg), ConfigError);
  CHECK_THROWS_AS(train_filter_multi({}, {}, cfg), ConfigError);
}

TEST_CASE("invalid training setups are rejected up front") {
  SSModelSpec canon = make_canonical_model(0.0);
  SSModelSpec cv = make_cv_model(0.0);
  Dataset data = generate_dataset(canon, 8, 8, 3);

  TrainConfig cfg = quick_config(FilterVariant::knet_kg);
  cfg.objective = TrainObjective::elbo;
  CHECK_THROWS_AS(train_filter(canon, data, cfg), ConfigError);

  TrainConfig bkn_l2 = quick_config(FilterVariant::bkn);
  bkn_l2.objective = TrainObjective::l2;
  CHECK_THROWS_AS(train_filter(canon, data, bkn_l2), ConfigError);

  // Covariance supervision is unavailable when fewer components are
  // observed than tracked.
  Dataset cv_data = generate_dataset(cv, 8, 8, 4);
  TrainConfig m2cfg = quick_config(FilterVariant::knet_kg);
  m2cfg.objective = TrainObjective::m2;
  CHECK_THROWS_AS(train_filter(cv, cv_data, m2cfg), ConfigError);

  // Dataset and filter model must share dimensions.
  CHECK_THROWS_AS(train_filter(cv, data, quick_config(FilterVariant::knet_kg)),
                  ConfigError);

  Dataset tiny = generate_dataset(canon, 1, 8, 5);
  CHECK_THROWS_AS(train_filter(canon, tiny, quick_config(FilterVariant::knet_kg)),
                  ConfigError);

  TrainConfig bad = quick_config(FilterVariant::knet_kg);
  bad.epochs = 0;
  CHECK_THROWS_AS(train_filter(canon, data, bad), ConfigError);
}

TEST_CASE("divergent training reports the failing epoch instead of emitting NaNs") {
  // The blown-up step only overflows once the filter recursion has enough
  // steps to compound it, hence the longer horizon.
  SSModelSpec m = make_canonical_model(0.0);
  Dataset data = generate_dataset(m, 6, 60, 9);
  TrainConfig cfg = quick_config(FilterVariant::knet_kg, 4);
  cfg.learning_rate = 1e8;
  cfg.clip_norm = 1e12;
  CHECK_THROWS_AS(train_filter(m, data, cfg), TrainError);
}

TEST_CASE("remaining variants train end to end for a couple of epochs") {
  SSModelSpec m = make_canonical_model(0.0);
  Dataset data = generate_dataset(m, 8, 10, 13);

  for (FilterVariant v : {FilterVariant::skn, FilterVariant::blackbox,
                          FilterVariant::bkn}) {
    CAPTURE(to_string(v));
    TrainConfig cfg = quick_config(v, 2);
    TrainResult result = train_filter(m, data, cfg);
    CHECK(result.log.size() == 2);
    for (const auto& row : result.log) CHECK(std::isfinite(row.train_loss));
    RandomStream rng(7);
    Trajectory probe = simulate_trajectory(m, m.sample_x0(rng), 10, rng);
    FilterResult res = result.filter.run(probe, 2);
    CHECK(res.states.size() == 10);
    CHECK(result.filter.produces_covariance());
    CHECK(res.covs.size() == 10);
  }
}

TEST_CASE("training log writes the documented CSV layout") {
  namespace fs = std::filesystem;
  std::vector<TrainLogRow> log(2);
  log[0].epoch = 1;
  log[0].train_loss = 0.5;
  log[1].epoch = 2;
  log[1].train_loss = 0.25;
  const std::string path = (fs::temp_directory_path() / "kuq_tlog.csv").string();
  write_train_log_csv(path, log);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,train_loss,val_loss,val_mse_db,val_anees,beta,wallclock_s");
  int rows = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
  fs::remove(path);
}
