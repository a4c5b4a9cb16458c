#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kalmanuq/state_space.hpp"
#include "kalmanuq/training.hpp"

namespace kalmanuq {

enum class Scenario { canonical, pendulum, cv };

Scenario scenario_from_string(const std::string& s);
std::string to_string(Scenario scenario);
ModelTag scenario_model_tag(Scenario scenario);

// One experiment: a scenario with an optional systematic model error, a grid
// of noise levels, a filter roster and the training protocol. Loaded from
// JSON; unknown keys are rejected at every level.
struct ExperimentConfig {
  std::string name = "experiment";
  Scenario scenario = Scenario::canonical;
  MismatchConfig mismatch;
  std::vector<double> snr_grid_db = {-10.0, 0.0, 10.0, 20.0, 30.0};
  std::vector<FilterVariant> filters = {FilterVariant::ekf,
                                        FilterVariant::knet_kg,
                                        FilterVariant::bkn};
  TrainConfig train;

  // Training trajectories over the whole grid (split evenly across points)
  // and fresh test trajectories per point.
  int train_count = 300;
  int eval_count = 100;
  int horizon = 100;
  int ensemble_members = 20;  // J of the dropout ensemble

  std::uint64_t seed = 0;
  std::string out_dir = "out";

  // Throws ConfigError for an invalid combination; in particular the
  // covariance-extraction filter is rejected on the pendulum scenario
  // before any computation (its observation Jacobian is rank deficient).
  void validate() const;

  // Artifact directory of this experiment: out_dir/name.
  std::string experiment_dir() const;
};

// Strict JSON parsing. Unknown keys, wrong types and invalid enum strings
// all throw ConfigError; absent keys keep their defaults. The velocity-model
// study under an evolution mismatch defaults to the small-data protocol
// (100 trajectories, 5 of them validation, 10 test) unless the file says
// otherwise.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

// One result row of a sweep or evaluation table. Metric fields are NaN and
// error is nonempty when the filter failed at this grid point; the run
// continues with the remaining rows.
struct SweepRow {
  double snr_db = 0.0;
  std::string filter;
  double mse_db = 0.0;
  double log_anees = 0.0;
  double latency_ms = 0.0;
  std::string error;
};

// snr_db,filter,mse_db,log_anees,latency_ms,error
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);
std::vector<SweepRow> read_sweep_csv(const std::string& path);

struct BenchRow {
  std::string scenario;
  std::string filter;
  std::string mode;  // serial, parallel or na
  double median_ms = 0.0;
};

// Generates the grid's training and test datasets and writes them as CSV
// with JSON sidecars. Returns the written paths.
std::vector<std::string> run_generate(const ExperimentConfig& cfg);

// Trains every learned filter of the roster once over the whole noise grid
// and writes checkpoint_<filter>.json plus train_log_<filter>.csv. Returns
// the trained filters keyed by variant.
std::map<FilterVariant, TrainedFilter> run_train(const ExperimentConfig& cfg);

// Evaluates the roster per grid point on fresh test trajectories, reading
// checkpoints written by run_train (the model-based filter needs none), and
// writes eval.csv. Per-filter failures become row-level errors.
std::vector<SweepRow> run_evaluate(const ExperimentConfig& cfg);

// generate + train + evaluate in one pass (filters are passed in memory, so
// no checkpoint round trip) plus sweep.csv and the mse / log-ANEES SVG
// figures with sibling CSVs.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg);

// Single velocity-model run under a strong process-noise mismatch
// (Q_data = 100 Q_model, r^2 = 10): trains on that one level, rolls one test
// trajectory, writes the x-position tracks of truth and every filter plus
// per-step predicted-vs-empirical error covariance traces, each as CSV and
// SVG. Requires scenario = cv.
void run_single(const ExperimentConfig& cfg);

// Inference latency per filter on the linear and pendulum scenarios, the
// dropout ensemble in serial and parallel mode. Untrained networks stand in
// when no checkpoint exists (latency does not depend on the weights).
// Writes bench.csv.
std::vector<BenchRow> run_bench(const ExperimentConfig& cfg);

// Re-derives the SVG figures of an experiment directory from the CSVs that
// earlier commands wrote (sweep.csv and the single-run traces). Returns the
// SVG paths. Throws IoError when nothing plottable is found.
std::vector<std::string> run_plot(const ExperimentConfig& cfg);

}  // namespace kalmanuq
