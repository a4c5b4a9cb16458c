#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "kalmanuq/dataset_io.hpp"
#include "kalmanuq/ekf.hpp"
#include "kalmanuq/errors.hpp"
#include "kalmanuq/metrics.hpp"
#include "kalmanuq/state_space.hpp"
#include "kalmanuq/training.hpp"

namespace py = pybind11;
using namespace kalmanuq;

namespace {

TrainObjective objective_from_py(const std::string& s) {
  return train_objective_from_string(s);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "State estimation with model-based and learned Kalman filters";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericalError>(m, "NumericalError",
                                         PyExc_ArithmeticError);
  py::register_exception<TrainError>(m, "TrainError", PyExc_RuntimeError);

  py::class_<SSModelSpec>(m, "Model")
      .def_property_readonly(
          "tag", [](const SSModelSpec& s) { return to_string(s.tag); })
      .def_readonly("state_dim", &SSModelSpec::state_dim)
      .def_readonly("obs_dim", &SSModelSpec::obs_dim)
      .def_readonly("snr_db", &SSModelSpec::snr_db)
      .def_readonly("Q", &SSModelSpec::Q)
      .def_readonly("R", &SSModelSpec::R)
      .def("f",
           [](const SSModelSpec& s, const Eigen::VectorXd& x) {
             return s.f(x);
           })
      .def("h",
           [](const SSModelSpec& s, const Eigen::VectorXd& x) {
             return s.h(x);
           })
      .def("jac_f",
           [](const SSModelSpec& s, const Eigen::VectorXd& x) {
             return s.jac_f(x);
           })
      .def("jac_h", [](const SSModelSpec& s, const Eigen::VectorXd& x) {
        return s.jac_h(x);
      });

  m.def(
      "make_model",
      [](const std::string& tag, double snr_db) {
        return make_model(model_tag_from_string(tag), snr_db);
      },
      py::arg("tag"), py::arg("snr_db"),
      "Scenario model by tag: canonical, pendulum, constant_velocity or "
      "constant_acceleration");

  m.def(
      "apply_mismatch",
      [](const SSModelSpec& nominal, const std::string& kind, double factor) {
        MismatchConfig cfg;
        cfg.kind = mismatch_kind_from_string(kind);
        cfg.factor = factor;
        return apply_mismatch(nominal, cfg);
      },
      py::arg("nominal"), py::arg("kind"), py::arg("factor") = 1.0,
      "Returns (data_model, filter_model)");

  py::class_<Trajectory>(m, "Trajectory")
      .def_readonly("x0", &Trajectory::x0)
      .def_readonly("states", &Trajectory::states)
      .def_readonly("observations", &Trajectory::observations)
      .def_property_readonly("horizon", &Trajectory::horizon);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("model", &Dataset::model)
      .def_readonly("trajectories", &Dataset::trajectories)
      .def_readonly("horizon", &Dataset::horizon)
      .def_readonly("seed", &Dataset::seed)
      .def_property_readonly("count", &Dataset::count);

  m.def("generate_dataset", &generate_dataset, py::arg("model"),
        py::arg("count"), py::arg("horizon"), py::arg("seed"));
  m.def(
      "simulate_trajectory",
      [](const SSModelSpec& model, const Eigen::VectorXd& x0, int horizon,
         std::uint64_t seed) {
        RandomStream rng(seed);
        return simulate_trajectory(model, x0, horizon, rng);
      },
      py::arg("model"), py::arg("x0"), py::arg("horizon"), py::arg("seed"));
  m.def("project_states", &project_states, py::arg("dataset"),
        py::arg("target"));
  m.def("write_dataset_csv", &write_dataset_csv, py::arg("dataset"),
        py::arg("path"));
  m.def("read_dataset_csv", &read_dataset_csv, py::arg("path"));

  py::class_<FilterResult>(m, "FilterResult")
      .def_readonly("states", &FilterResult::states)
      .def_readonly("covs", &FilterResult::covs);

  m.def(
      "run_ekf",
      [](const SSModelSpec& model, const Eigen::VectorXd& x0,
         const std::vector<Eigen::VectorXd>& observations) {
        return run_ekf(model, x0, observations);
      },
      py::arg("model"), py::arg("x0"), py::arg("observations"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init([](const std::string& variant, py::object objective,
                       int epochs, int batch_size, double learning_rate,
                       double val_fraction, double clip_norm, int patience,
                       double beta_start, double beta_end,
                       double beta_ramp_fraction, int train_ensemble_size,
                       int ensemble_members, int hidden_dim,
                       const std::string& cov_form, std::uint64_t seed) {
             TrainConfig cfg;
             cfg.variant = filter_variant_from_string(variant);
             if (!objective.is_none())
               cfg.objective = objective_from_py(objective.cast<std::string>());
             cfg.epochs = epochs;
             cfg.batch_size = batch_size;
             cfg.learning_rate = learning_rate;
             cfg.val_fraction = val_fraction;
             cfg.clip_norm = clip_norm;
             cfg.patience = patience;
             cfg.beta_start = beta_start;
             cfg.beta_end = beta_end;
             cfg.beta_ramp_fraction = beta_ramp_fraction;
             cfg.train_ensemble_size = train_ensemble_size;
             cfg.ensemble_members = ensemble_members;
             cfg.hidden_dim = hidden_dim;
             cfg.cov_form = cov_update_form_from_string(cov_form);
             cfg.seed = seed;
             return cfg;
           }),
           py::arg("variant"), py::arg("objective") = py::none(),
           py::arg("epochs") = 100, py::arg("batch_size") = 8,
           py::arg("learning_rate") = 1e-3, py::arg("val_fraction") = 0.1,
           py::arg("clip_norm") = 10.0, py::arg("patience") = 0,
           py::arg("beta_start") = 0.1, py::arg("beta_end") = 0.9,
           py::arg("beta_ramp_fraction") = 0.6,
           py::arg("train_ensemble_size") = 8,
           py::arg("ensemble_members") = 20, py::arg("hidden_dim") = 0,
           py::arg("cov_form") = "joseph", py::arg("seed") = 0)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<TrainedFilter>(m, "TrainedFilter")
      .def_static("make_ekf", &TrainedFilter::make_ekf, py::arg("model"))
      .def_property_readonly(
          "variant",
          [](const TrainedFilter& tf) { return to_string(tf.variant()); })
      .def_property_readonly("model", &TrainedFilter::filter_model)
      .def_property_readonly("produces_covariance",
                             &TrainedFilter::produces_covariance)
      .def(
          "run",
          [](const TrainedFilter& tf, const Trajectory& traj,
             std::uint64_t seed) { return tf.run(traj, seed); },
          py::arg("trajectory"), py::arg("seed") = 0)
      .def(
          "run_with_model",
          [](const TrainedFilter& tf, const SSModelSpec& model,
             const Trajectory& traj, std::uint64_t seed) {
            return tf.run(model, traj, seed);
          },
          py::arg("model"), py::arg("trajectory"), py::arg("seed") = 0)
      .def("save", &TrainedFilter::save, py::arg("path"))
      .def_static("load", &TrainedFilter::load, py::arg("path"));

  py::class_<TrainLogRow>(m, "TrainLogRow")
      .def_readonly("epoch", &TrainLogRow::epoch)
      .def_readonly("train_loss", &TrainLogRow::train_loss)
      .def_readonly("val_loss", &TrainLogRow::val_loss)
      .def_readonly("val_mse_db", &TrainLogRow::val_mse_db)
      .def_readonly("val_anees", &TrainLogRow::val_anees)
      .def_readonly("beta", &TrainLogRow::beta);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("filter", &TrainResult::filter)
      .def_readonly("log", &TrainResult::log)
      .def_readonly("best_epoch", &TrainResult::best_epoch)
      .def_readonly("best_val_loss", &TrainResult::best_val_loss);

  m.def("train_filter", &train_filter, py::arg("filter_model"),
        py::arg("data"), py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
  m.def("train_filter_multi", &train_filter_multi, py::arg("filter_models"),
        py::arg("datasets"), py::arg("config"),
        py::call_guard<py::gil_scoped_release>());

  m.def(
      "compute_mse",
      [](const StateBatch& predictions, const StateBatch& targets) {
        const MseResult r = compute_mse(predictions, targets);
        return py::make_tuple(r.linear, r.db);
      },
      py::arg("predictions"), py::arg("targets"),
      "Returns (linear, db)");
  m.def(
      "compute_anees",
      [](const StateBatch& errors, const CovBatch& covs) {
        const AneesResult r = compute_anees(errors, covs);
        return py::make_tuple(r.anees, r.log_anees);
      },
      py::arg("errors"), py::arg("covs"), "Returns (anees, log_anees)");
  m.def("compute_apec", &compute_apec, py::arg("covs"));
  m.def("compute_eec", &compute_eec, py::arg("errors"));

  m.def("derive_seed", &derive_seed, py::arg("master"), py::arg("a"),
        py::arg("b") = 0);
}
