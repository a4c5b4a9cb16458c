#include "kalmanuq/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "kalmanuq/dataset_io.hpp"
#include "kalmanuq/errors.hpp"
#include "kalmanuq/metrics.hpp"
#include "kalmanuq/plotting.hpp"

namespace kalmanuq {

namespace fs = std::filesystem;
using nlohmann::json;

Scenario scenario_from_string(const std::string& s) {
  if (s == "canonical") return Scenario::canonical;
  if (s == "pendulum") return Scenario::pendulum;
  if (s == "cv") return Scenario::cv;
  throw ConfigError("unknown scenario: " + s);
}

std::string to_string(Scenario scenario) {
  switch (scenario) {
    case Scenario::canonical:
      return "canonical";
    case Scenario::pendulum:
      return "pendulum";
    case Scenario::cv:
      return "cv";
  }
  throw ConfigError("unknown scenario");
}

ModelTag scenario_model_tag(Scenario scenario) {
  switch (scenario) {
    case Scenario::canonical:
      return ModelTag::canonical;
    case Scenario::pendulum:
      return ModelTag::pendulum;
    case Scenario::cv:
      return ModelTag::constant_velocity;
  }
  throw ConfigError("unknown scenario");
}

void ExperimentConfig::validate() const {
  if (name.empty() || name.find_first_of("/\\") != std::string::npos ||
      name == "." || name == "..")
    throw ConfigError("experiment name must be a plain directory name");
  if (snr_grid_db.empty()) throw ConfigError("the noise grid is empty");
  if (filters.empty()) throw ConfigError("the filter roster is empty");
  for (std::size_t i = 0; i < filters.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (filters[i] == filters[j])
        throw ConfigError("duplicate filter in the roster: " +
                          kalmanuq::to_string(filters[i]));
  if (eval_count < 1) throw ConfigError("eval_count must be at least 1");
  if (horizon < 1) throw ConfigError("horizon must be at least 1");
  if (ensemble_members < 2)
    throw ConfigError("the dropout ensemble needs at least 2 members");

  bool any_learned = false;
  for (FilterVariant v : filters) {
    if (v != FilterVariant::ekf) any_learned = true;
    // The extraction path inverts through the observation Jacobian; the
    // pendulum's is rank deficient at every state, so reject before any
    // computation instead of failing per row.
    if (scenario == Scenario::pendulum && v == FilterVariant::knet_kg)
      throw ConfigError(
          "covariance extraction from the learned gain needs a full-rank "
          "observation Jacobian; the pendulum observation has rank 1");
  }
  if (any_learned &&
      train_count < 2 * static_cast<int>(snr_grid_db.size()))
    throw ConfigError(
        "train_count must provide at least two trajectories per grid point");

  if (mismatch.kind == MismatchConfig::Kind::evolution_model &&
      scenario != Scenario::cv)
    throw ConfigError(
        "the evolution-model mismatch swaps in the constant-acceleration "
        "generator and is defined for the cv scenario only");
  if ((mismatch.kind == MismatchConfig::Kind::process_noise ||
       mismatch.kind == MismatchConfig::Kind::observation_noise) &&
      mismatch.factor <= 0.0)
    throw ConfigError("mismatch factor must be positive");
}

std::string ExperimentConfig::experiment_dir() const {
  return (fs::path(out_dir) / name).string();
}

namespace {

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& where) {
  for (const auto& item : j.items())
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
      throw ConfigError("unknown config key in " + where + ": " + item.key());
}

double as_double(const json& v, const std::string& key) {
  if (!v.is_number())
    throw ConfigError("config key " + key + " must be a number");
  return v.get<double>();
}

int as_int(const json& v, const std::string& key) {
  if (!v.is_number_integer())
    throw ConfigError("config key " + key + " must be an integer");
  return v.get<int>();
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean())
    throw ConfigError("config key " + key + " must be a boolean");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string())
    throw ConfigError("config key " + key + " must be a string");
  return v.get<std::string>();
}

void parse_train(const json& j, TrainConfig& tc) {
  check_keys(j,
             {"epochs", "batch_size", "learning_rate", "val_fraction",
              "clip_norm", "patience", "beta_start", "beta_end",
              "beta_ramp_fraction", "train_ensemble_size", "kl_c1", "kl_c2",
              "dropout_p_init_min", "dropout_p_init_max", "hidden_dim",
              "gain_out_scale", "cov_form", "per_step_masks"},
             "train");
  if (j.contains("epochs")) tc.epochs = as_int(j["epochs"], "train.epochs");
  if (j.contains("batch_size"))
    tc.batch_size = as_int(j["batch_size"], "train.batch_size");
  if (j.contains("learning_rate"))
    tc.learning_rate = as_double(j["learning_rate"], "train.learning_rate");
  if (j.contains("val_fraction"))
    tc.val_fraction = as_double(j["val_fraction"], "train.val_fraction");
  if (j.contains("clip_norm"))
    tc.clip_norm = as_double(j["clip_norm"], "train.clip_norm");
  if (j.contains("patience"))
    tc.patience = as_int(j["patience"], "train.patience");
  if (j.contains("beta_start"))
    tc.beta_start = as_double(j["beta_start"], "train.beta_start");
  if (j.contains("beta_end"))
    tc.beta_end = as_double(j["beta_end"], "train.beta_end");
  if (j.contains("beta_ramp_fraction"))
    tc.beta_ramp_fraction =
        as_double(j["beta_ramp_fraction"], "train.beta_ramp_fraction");
  if (j.contains("train_ensemble_size"))
    tc.train_ensemble_size =
        as_int(j["train_ensemble_size"], "train.train_ensemble_size");
  if (j.contains("kl_c1")) tc.kl_c1 = as_double(j["kl_c1"], "train.kl_c1");
  if (j.contains("kl_c2")) tc.kl_c2 = as_double(j["kl_c2"], "train.kl_c2");
  if (j.contains("dropout_p_init_min"))
    tc.dropout_p_init_min =
        as_double(j["dropout_p_init_min"], "train.dropout_p_init_min");
  if (j.contains("dropout_p_init_max"))
    tc.dropout_p_init_max =
        as_double(j["dropout_p_init_max"], "train.dropout_p_init_max");
  if (j.contains("hidden_dim"))
    tc.hidden_dim = as_int(j["hidden_dim"], "train.hidden_dim");
  if (j.contains("gain_out_scale"))
    tc.gain_out_scale = as_double(j["gain_out_scale"], "train.gain_out_scale");
  if (j.contains("cov_form"))
    tc.cov_form =
        cov_update_form_from_string(as_string(j["cov_form"], "train.cov_form"));
  if (j.contains("per_step_masks"))
    tc.per_step_masks = as_bool(j["per_step_masks"], "train.per_step_masks");
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid json: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a json object");
  check_keys(j,
             {"name", "scenario", "mismatch", "snr_grid_db", "filters",
              "train", "train_count", "eval_count", "horizon",
              "ensemble_members", "seed", "out_dir"},
             "config");

  ExperimentConfig cfg;
  if (j.contains("name")) cfg.name = as_string(j["name"], "name");
  if (j.contains("scenario"))
    cfg.scenario = scenario_from_string(as_string(j["scenario"], "scenario"));
  if (j.contains("mismatch")) {
    const json& m = j["mismatch"];
    if (!m.is_object()) throw ConfigError("mismatch must be a json object");
    check_keys(m, {"kind", "factor"}, "mismatch");
    if (m.contains("kind"))
      cfg.mismatch.kind =
          mismatch_kind_from_string(as_string(m["kind"], "mismatch.kind"));
    if (m.contains("factor"))
      cfg.mismatch.factor = as_double(m["factor"], "mismatch.factor");
  }
  if (j.contains("snr_grid_db")) {
    const json& g = j["snr_grid_db"];
    if (!g.is_array()) throw ConfigError("snr_grid_db must be an array");
    cfg.snr_grid_db.clear();
    for (const json& v : g)
      cfg.snr_grid_db.push_back(as_double(v, "snr_grid_db entry"));
  }
  if (j.contains("filters")) {
    const json& f = j["filters"];
    if (!f.is_array()) throw ConfigError("filters must be an array");
    cfg.filters.clear();
    for (const json& v : f)
      cfg.filters.push_back(
          filter_variant_from_string(as_string(v, "filters entry")));
  }
  if (j.contains("train")) {
    if (!j["train"].is_object())
      throw ConfigError("train must be a json object");
    parse_train(j["train"], cfg.train);
  }
  if (j.contains("train_count"))
    cfg.train_count = as_int(j["train_count"], "train_count");
  if (j.contains("eval_count"))
    cfg.eval_count = as_int(j["eval_count"], "eval_count");
  if (j.contains("horizon")) cfg.horizon = as_int(j["horizon"], "horizon");
  if (j.contains("ensemble_members"))
    cfg.ensemble_members = as_int(j["ensemble_members"], "ensemble_members");
  if (j.contains("seed")) {
    const json& s = j["seed"];
    if (!s.is_number_integer() ||
        (!s.is_number_unsigned() && s.get<long long>() < 0))
      throw ConfigError("config key seed must be a nonnegative integer");
    cfg.seed = s.get<std::uint64_t>();
  }
  if (j.contains("out_dir")) cfg.out_dir = as_string(j["out_dir"], "out_dir");

  // The velocity-model mismatch study uses the small-data protocol unless
  // the file overrides it: 100 trajectories, 5 of them held out, 10 test.
  if (cfg.scenario == Scenario::cv &&
      cfg.mismatch.kind == MismatchConfig::Kind::evolution_model) {
    if (!j.contains("train_count")) cfg.train_count = 100;
    if (!j.contains("eval_count")) cfg.eval_count = 10;
    if (!j.contains("train") || !j["train"].contains("val_fraction"))
      cfg.train.val_fraction = 0.05;
  }

  // The experiment-level ensemble size is the one the trained filter runs
  // with; the training-time relaxed ensemble stays its own knob.
  cfg.train.ensemble_members = cfg.ensemble_members;
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str());
}

namespace {

struct PointModels {
  SSModelSpec data;
  SSModelSpec filter;
};

PointModels models_at(const ExperimentConfig& cfg, double snr_db) {
  const SSModelSpec nominal =
      make_model(scenario_model_tag(cfg.scenario), snr_db);
  auto [data, filter] = apply_mismatch(nominal, cfg.mismatch);
  return {std::move(data), std::move(filter)};
}

// Training trajectories of grid point i; the budget is split evenly with the
// remainder going to the leading points.
int train_count_at(const ExperimentConfig& cfg, std::size_t i) {
  const int points = static_cast<int>(cfg.snr_grid_db.size());
  const int base = cfg.train_count / points;
  const int extra = cfg.train_count % points;
  return base + (static_cast<int>(i) < extra ? 1 : 0);
}

Dataset training_set_at(const ExperimentConfig& cfg, std::size_t i,
                        const PointModels& pm) {
  Dataset d = generate_dataset(pm.data, train_count_at(cfg, i), cfg.horizon,
                               derive_seed(cfg.seed, 0x747261696E, i));
  d.mismatch = cfg.mismatch;
  if (pm.data.state_dim != pm.filter.state_dim)
    d = project_states(d, pm.filter);
  return d;
}

Dataset test_set_at(const ExperimentConfig& cfg, std::size_t i,
                    const PointModels& pm) {
  Dataset d = generate_dataset(pm.data, cfg.eval_count, cfg.horizon,
                               derive_seed(cfg.seed, 0x74657374, i));
  d.mismatch = cfg.mismatch;
  if (pm.data.state_dim != pm.filter.state_dim)
    d = project_states(d, pm.filter);
  return d;
}

std::string checkpoint_path(const std::string& dir, FilterVariant v) {
  return dir + "/checkpoint_" + to_string(v) + ".json";
}

std::uint64_t train_seed_for(const ExperimentConfig& cfg, FilterVariant v) {
  return derive_seed(cfg.seed, 0x6E6574,
                     static_cast<std::uint64_t>(static_cast<int>(v)));
}

std::string sanitize_cell(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
  return s;
}

// Fills the metric fields of the row from one filter over one test set.
// Trajectories evaluate in parallel when cores allow; all reductions walk
// fixed index order so the numbers do not depend on scheduling.
void eval_point(const TrainedFilter& tf, const SSModelSpec& filter_model,
                const Dataset& test, const ExperimentConfig& cfg,
                std::size_t point, SweepRow& row) {
  const int count = test.count();
  std::vector<StateSeq> preds(count), errors(count);
  std::vector<CovSeq> covs(count);
  std::vector<double> elapsed_ms(count, 0.0);

  auto work = [&](int j) {
    const Trajectory& traj = test.trajectories[j];
    const auto t0 = std::chrono::steady_clock::now();
    FilterResult r = tf.run(filter_model, traj,
                            derive_seed(cfg.seed, 0x6576616C00 + point, j));
    elapsed_ms[j] = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    StateSeq err(r.states.size());
    for (std::size_t t = 0; t < r.states.size(); ++t)
      err[t] = r.states[t] - traj.states[t];
    preds[j] = std::move(r.states);
    covs[j] = std::move(r.covs);
    errors[j] = std::move(err);
  };

  const unsigned workers =
      std::min(std::max(1u, std::thread::hardware_concurrency()),
               static_cast<unsigned>(count));
  if (workers <= 1) {
    for (int j = 0; j < count; ++j) work(j);
  } else {
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (int j = static_cast<int>(w); j < count;
               j += static_cast<int>(workers))
            work(j);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      });
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  StateBatch preds_b, errors_b, targets_b;
  CovBatch covs_b;
  bool have_covs = true;
  for (int j = 0; j < count; ++j) {
    preds_b.push_back(std::move(preds[j]));
    errors_b.push_back(std::move(errors[j]));
    targets_b.push_back(test.trajectories[j].states);
    if (covs[j].empty())
      have_covs = false;
    else
      covs_b.push_back(std::move(covs[j]));
  }

  double total_ms = 0.0;
  for (double v : elapsed_ms) total_ms += v;
  row.latency_ms = total_ms / count;
  row.mse_db = compute_mse(preds_b, targets_b).db;
  row.log_anees = have_covs ? compute_anees(errors_b, covs_b).log_anees
                            : std::numeric_limits<double>::quiet_NaN();
}

std::vector<SweepRow> evaluate_roster(
    const ExperimentConfig& cfg,
    const std::map<FilterVariant, TrainedFilter>& trained) {
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < cfg.snr_grid_db.size(); ++i) {
    const double snr = cfg.snr_grid_db[i];
    const PointModels pm = models_at(cfg, snr);
    const Dataset test = test_set_at(cfg, i, pm);
    for (FilterVariant v : cfg.filters) {
      SweepRow row;
      row.snr_db = snr;
      row.filter = to_string(v);
      row.mse_db = std::numeric_limits<double>::quiet_NaN();
      row.log_anees = std::numeric_limits<double>::quiet_NaN();
      row.latency_ms = std::numeric_limits<double>::quiet_NaN();
      try {
        if (v == FilterVariant::ekf) {
          eval_point(TrainedFilter::make_ekf(pm.filter), pm.filter, test, cfg,
                     i, row);
        } else {
          eval_point(trained.at(v), pm.filter, test, cfg, i, row);
        }
      } catch (const std::out_of_range&) {
        row.error = "no trained filter for this variant";
      } catch (const std::exception& e) {
        row.error = sanitize_cell(e.what());
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

// snr-indexed series of one metric column, one series per filter in roster
// order; rows whose metric is not finite are dropped.
std::vector<std::string> write_sweep_plots(const std::string& dir,
                                           const std::vector<SweepRow>& rows) {
  struct Pick {
    const char* base;
    const char* title;
    const char* y_label;
    double SweepRow::* column;
  };
  const Pick picks[] = {
      {"sweep_mse", "Test MSE over the noise grid", "MSE [dB]",
       &SweepRow::mse_db},
      {"sweep_log_anees", "Calibration over the noise grid", "log ANEES",
       &SweepRow::log_anees},
  };

  std::vector<std::string> svgs;
  for (const Pick& pick : picks) {
    PlotSpec spec;
    spec.title = pick.title;
    spec.x_label = "1/r^2 [dB]";
    spec.y_label = pick.y_label;
    std::vector<std::string> order;
    for (const SweepRow& row : rows) {
      if (!std::isfinite(row.*(pick.column))) continue;
      auto it = std::find(order.begin(), order.end(), row.filter);
      std::size_t k;
      if (it == order.end()) {
        order.push_back(row.filter);
        spec.series.push_back({row.filter, {}, {}});
        k = order.size() - 1;
      } else {
        k = static_cast<std::size_t>(it - order.begin());
      }
      spec.series[k].xs.push_back(row.snr_db);
      spec.series[k].ys.push_back(row.*(pick.column));
    }
    if (spec.series.empty()) continue;
    const std::string base = dir + "/" + pick.base;
    emit_svg_line_plot(base, spec);
    svgs.push_back(base + ".svg");
  }
  return svgs;
}

}  // namespace

void write_sweep_csv(const std::string& path,
                     const std::vector<SweepRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "snr_db,filter,mse_db,log_anees,latency_ms,error\n";
  for (const SweepRow& row : rows)
    out << format_value(row.snr_db) << ',' << row.filter << ','
        << format_value(row.mse_db) << ',' << format_value(row.log_anees)
        << ',' << format_value(row.latency_ms) << ','
        << sanitize_cell(row.error) << '\n';
  if (!out.good()) throw IoError("failed writing: " + path);
}

std::vector<SweepRow> read_sweep_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line) ||
      line != "snr_db,filter,mse_db,log_anees,latency_ms,error")
    throw IoError("unexpected sweep csv header in " + path);
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (cells.size() < 5) {
      const std::size_t comma = line.find(',', start);
      if (comma == std::string::npos)
        throw IoError("malformed sweep csv row in " + path);
      cells.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    cells.push_back(line.substr(start));
    SweepRow row;
    row.snr_db = std::stod(cells[0]);
    row.filter = cells[1];
    row.mse_db = std::stod(cells[2]);
    row.log_anees = std::stod(cells[3]);
    row.latency_ms = std::stod(cells[4]);
    row.error = cells[5];
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<std::string> run_generate(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::string dir = cfg.experiment_dir();
  fs::create_directories(dir);
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < cfg.snr_grid_db.size(); ++i) {
    const PointModels pm = models_at(cfg, cfg.snr_grid_db[i]);
    // Raw generator output on purpose: for an evolution mismatch this keeps
    // the full augmented state; training projects in memory.
    Dataset train =
        generate_dataset(pm.data, train_count_at(cfg, i), cfg.horizon,
                         derive_seed(cfg.seed, 0x747261696E, i));
    train.mismatch = cfg.mismatch;
    Dataset test = generate_dataset(pm.data, cfg.eval_count, cfg.horizon,
                                    derive_seed(cfg.seed, 0x74657374, i));
    test.mismatch = cfg.mismatch;
    const std::string train_path =
        dir + "/data_train_point" + std::to_string(i) + ".csv";
    const std::string test_path =
        dir + "/data_test_point" + std::to_string(i) + ".csv";
    write_dataset_csv(train, train_path);
    write_dataset_csv(test, test_path);
    paths.push_back(train_path);
    paths.push_back(test_path);
  }
  return paths;
}

std::map<FilterVariant, TrainedFilter> run_train(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::string dir = cfg.experiment_dir();
  fs::create_directories(dir);

  bool any_learned = false;
  for (FilterVariant v : cfg.filters)
    if (v != FilterVariant::ekf) any_learned = true;

  std::map<FilterVariant, TrainedFilter> trained;
  if (!any_learned) return trained;

  // One pooled pass over the whole noise grid per learned filter.
  std::vector<SSModelSpec> filter_models;
  std::vector<Dataset> train_sets;
  for (std::size_t i = 0; i < cfg.snr_grid_db.size(); ++i) {
    PointModels pm = models_at(cfg, cfg.snr_grid_db[i]);
    train_sets.push_back(training_set_at(cfg, i, pm));
    filter_models.push_back(std::move(pm.filter));
  }

  for (FilterVariant v : cfg.filters) {
    if (v == FilterVariant::ekf) continue;
    TrainConfig tc = cfg.train;
    tc.variant = v;
    tc.seed = train_seed_for(cfg, v);
    TrainResult res = train_filter_multi(filter_models, train_sets, tc);
    res.filter.save(checkpoint_path(dir, v));
    write_train_log_csv(dir + "/train_log_" + to_string(v) + ".csv", res.log);
    trained.emplace(v, std::move(res.filter));
  }
  return trained;
}

std::vector<SweepRow> run_evaluate(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::string dir = cfg.experiment_dir();
  fs::create_directories(dir);

  std::map<FilterVariant, TrainedFilter> trained;
  for (FilterVariant v : cfg.filters) {
    if (v == FilterVariant::ekf) continue;
    const std::string path = checkpoint_path(dir, v);
    if (!fs::exists(path))
      throw ConfigError("missing checkpoint " + path +
                        "; run the train command first");
    trained.emplace(v, TrainedFilter::load(path));
  }

  std::vector<SweepRow> rows = evaluate_roster(cfg, trained);
  write_sweep_csv(dir + "/eval.csv", rows);
  return rows;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::string dir = cfg.experiment_dir();
  fs::create_directories(dir);

  const std::map<FilterVariant, TrainedFilter> trained = run_train(cfg);
  std::vector<SweepRow> rows = evaluate_roster(cfg, trained);
  write_sweep_csv(dir + "/sweep.csv", rows);
  write_sweep_plots(dir, rows);
  return rows;
}

void run_single(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.scenario != Scenario::cv)
    throw ConfigError("the single-run study is defined on the cv scenario");
  const std::string dir = cfg.experiment_dir();
  fs::create_directories(dir);

  // Fixed study setting: strong process-noise mismatch at r^2 = 10.
  const double snr_db = -10.0;
  MismatchConfig mm;
  mm.kind = MismatchConfig::Kind::process_noise;
  mm.factor = 100.0;
  const SSModelSpec nominal =
      make_model(ModelTag::constant_velocity, snr_db);
  auto [data_model, filter_model] = apply_mismatch(nominal, mm);

  Dataset train_set =
      generate_dataset(data_model, cfg.train_count, cfg.horizon,
                       derive_seed(cfg.seed, 0x736E6774));
  train_set.mismatch = mm;

  std::map<FilterVariant, TrainedFilter> trained;
  for (FilterVariant v : cfg.filters) {
    if (v == FilterVariant::ekf) continue;
    TrainConfig tc = cfg.train;
    tc.variant = v;
    tc.seed = train_seed_for(cfg, v);
    trained.emplace(v,
                    train_filter_multi({filter_model}, {train_set}, tc).filter);
  }

  const Trajectory traj =
      generate_dataset(data_model, 1, cfg.horizon,
                       derive_seed(cfg.seed, 0x736E676C))
          .trajectories.front();
  const int T = traj.horizon();
  std::vector<double> ts(T);
  for (int t = 0; t < T; ++t) ts[t] = t + 1;

  PlotSpec tracks;
  tracks.title = "Single run, x position";
  tracks.x_label = "t";
  tracks.y_label = "x position";
  std::vector<double> truth_x(T);
  for (int t = 0; t < T; ++t) truth_x[t] = traj.states[t](0);
  tracks.series.push_back({"truth", ts, std::move(truth_x)});

  for (FilterVariant v : cfg.filters) {
    const TrainedFilter tf = v == FilterVariant::ekf
                                 ? TrainedFilter::make_ekf(filter_model)
                                 : trained.at(v);
    const FilterResult r =
        tf.run(filter_model, traj,
               derive_seed(cfg.seed, 0x736E6765,
                           static_cast<std::uint64_t>(static_cast<int>(v))));
    std::vector<double> xs(T);
    for (int t = 0; t < T; ++t) xs[t] = r.states[t](0);
    tracks.series.push_back({to_string(v), ts, std::move(xs)});

    if (r.covs.empty()) continue;
    // Per-step predicted error covariance against the empirical one of this
    // run, both summarized by their trace.
    std::vector<double> apec(T), eec(T);
    for (int t = 0; t < T; ++t) {
      apec[t] = r.covs[t].trace();
      eec[t] = (r.states[t] - traj.states[t]).squaredNorm();
    }
    PlotSpec calib;
    calib.title = "Predicted vs empirical error covariance, " + to_string(v);
    calib.x_label = "t";
    calib.y_label = "trace";
    calib.series.push_back({"apec", ts, std::move(apec)});
    calib.series.push_back({"eec", ts, std::move(eec)});
    emit_svg_line_plot(dir + "/single_calibration_" + to_string(v), calib);
  }

  emit_svg_line_plot(dir + "/single_tracks", tracks);
}

namespace {

TrainedFilter bench_filter(const ExperimentConfig& cfg, FilterVariant v,
                           const SSModelSpec& model) {
  if (v == FilterVariant::ekf) return TrainedFilter::make_ekf(model);
  const std::string path = checkpoint_path(cfg.experiment_dir(), v);
  if (fs::exists(path)) {
    TrainedFilter tf = TrainedFilter::load(path);
    if (tf.filter_model().state_dim == model.state_dim &&
        tf.filter_model().obs_dim == model.obs_dim)
      return tf;
  }
  // Latency does not depend on the weights, so a fresh network stands in
  // when no compatible checkpoint exists.
  TrainConfig tc = cfg.train;
  tc.variant = v;
  tc.seed = derive_seed(cfg.seed, 0x62656E66,
                        static_cast<std::uint64_t>(static_cast<int>(v)));
  return build_untrained(model, tc);
}

}  // namespace

std::vector<BenchRow> run_bench(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::string dir = cfg.experiment_dir();
  fs::create_directories(dir);

  const std::pair<const char*, ModelTag> scens[] = {
      {"linear", ModelTag::canonical},
      {"pendulum", ModelTag::pendulum},
  };

  std::vector<BenchRow> rows;
  for (std::size_t s = 0; s < 2; ++s) {
    const SSModelSpec model = make_model(scens[s].second, 0.0);
    const Trajectory traj =
        generate_dataset(model, 1, cfg.horizon,
                         derive_seed(cfg.seed, 0x62656E63, s))
            .trajectories.front();

    for (FilterVariant v : cfg.filters) {
      TrainedFilter tf = bench_filter(cfg, v, model);
      if (v == FilterVariant::bkn) {
        tf.ensemble().members = cfg.ensemble_members;
        tf.ensemble().threads = 1;
        const double serial =
            bench_latency([&] { tf.run(model, traj, 0); }).median_ms;
        rows.push_back({scens[s].first, to_string(v), "serial", serial});
        tf.ensemble().threads = static_cast<int>(
            std::max(2u, std::thread::hardware_concurrency()));
        const double parallel =
            bench_latency([&] { tf.run(model, traj, 0); }).median_ms;
        rows.push_back({scens[s].first, to_string(v), "parallel", parallel});
      } else if (v == FilterVariant::knet_kg) {
        // The inference pass alone; covariance extraction is a post-process
        // and never runs inside the tracking loop.
        const double ms = bench_latency([&] {
                            run_gain_filter(model, traj.x0, traj.observations,
                                            *tf.gain_net(), tf.normalizer(),
                                            DropoutMode::off, {});
                          }).median_ms;
        rows.push_back({scens[s].first, to_string(v), "na", ms});
      } else {
        const double ms =
            bench_latency([&] { tf.run(model, traj, 0); }).median_ms;
        rows.push_back({scens[s].first, to_string(v), "na", ms});
      }
    }
  }

  std::ofstream out(dir + "/bench.csv");
  if (!out) throw IoError("cannot open for writing: " + dir + "/bench.csv");
  out << "scenario,filter,mode,median_ms\n";
  for (const BenchRow& row : rows)
    out << row.scenario << ',' << row.filter << ',' << row.mode << ','
        << format_value(row.median_ms) << '\n';
  if (!out.good()) throw IoError("failed writing: " + dir + "/bench.csv");
  return rows;
}

namespace {

// Rebuilds the figure of an existing plot CSV (either sibling layout) at the
// same base path. Titles are not stored in the CSV; the file stem stands in.
std::string replot_csv(const std::string& base) {
  const std::string csv_path = base + ".csv";
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open: " + csv_path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty plot csv: " + csv_path);

  std::vector<std::string> header;
  {
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      if (comma == std::string::npos) {
        header.push_back(line.substr(start));
        break;
      }
      header.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
  }

  PlotSpec spec;
  spec.title = fs::path(base).filename().string();
  const bool long_layout = header.size() == 3 && header[0] == "series" &&
                           header[1] == "x" && header[2] == "y";
  if (long_layout) {
    spec.x_label = "x";
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const std::size_t c1 = line.find(',');
      const std::size_t c2 = line.find(',', c1 + 1);
      if (c1 == std::string::npos || c2 == std::string::npos)
        throw IoError("malformed plot csv row in " + csv_path);
      const std::string label = line.substr(0, c1);
      const double x = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
      const double y = std::stod(line.substr(c2 + 1));
      auto it = std::find_if(spec.series.begin(), spec.series.end(),
                             [&](const PlotSeries& s) {
                               return s.label == label;
                             });
      if (it == spec.series.end()) {
        spec.series.push_back({label, {x}, {y}});
      } else {
        it->xs.push_back(x);
        it->ys.push_back(y);
      }
    }
  } else {
    if (header.size() < 2)
      throw IoError("plot csv needs at least one value column: " + csv_path);
    spec.x_label = header[0];
    for (std::size_t k = 1; k < header.size(); ++k)
      spec.series.push_back({header[k], {}, {}});
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::size_t start = 0;
      while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
          cells.push_back(line.substr(start));
          break;
        }
        cells.push_back(line.substr(start, comma - start));
        start = comma + 1;
      }
      if (cells.size() != header.size())
        throw IoError("malformed plot csv row in " + csv_path);
      const double x = std::stod(cells[0]);
      for (std::size_t k = 1; k < cells.size(); ++k) {
        spec.series[k - 1].xs.push_back(x);
        spec.series[k - 1].ys.push_back(std::stod(cells[k]));
      }
    }
  }

  emit_svg_line_plot(base, spec);
  return base + ".svg";
}

}  // namespace

std::vector<std::string> run_plot(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::string dir = cfg.experiment_dir();
  std::vector<std::string> svgs;

  if (fs::exists(dir + "/sweep.csv")) {
    const std::vector<SweepRow> rows = read_sweep_csv(dir + "/sweep.csv");
    for (std::string& path : write_sweep_plots(dir, rows))
      svgs.push_back(std::move(path));
  } else if (fs::exists(dir + "/eval.csv")) {
    const std::vector<SweepRow> rows = read_sweep_csv(dir + "/eval.csv");
    for (std::string& path : write_sweep_plots(dir, rows))
      svgs.push_back(std::move(path));
  }

  std::vector<std::string> bases;
  if (fs::exists(dir)) {
    for (const fs::directory_entry& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("single_", 0) == 0 && entry.path().extension() == ".csv")
        bases.push_back((fs::path(dir) / entry.path().stem()).string());
    }
  }
  std::sort(bases.begin(), bases.end());
  for (const std::string& base : bases) svgs.push_back(replot_csv(base));

  if (svgs.empty())
    throw IoError("nothing to plot under " + dir +
                  "; run sweep or single first");
  return svgs;
}

}  // namespace kalmanuq
