#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kalmanuq/bayesian.hpp"
#include "kalmanuq/checkpoint.hpp"
#include "kalmanuq/filters.hpp"

namespace kalmanuq {

// Supervised objectives. m2 and emp need a differentiable covariance, so for
// the plain gain network they imply the optimal-gain extraction chain and a
// full-column-rank observation Jacobian; elbo is the dropout variant only.
enum class TrainObjective { l2, m2, emp, gnll, elbo };

TrainObjective train_objective_from_string(const std::string& s);
std::string to_string(TrainObjective objective);
// l2 for the gain network, gnll for the split network and the tracker, elbo
// for the dropout variant. Throws ConfigError for the model-based filter.
TrainObjective default_objective(FilterVariant variant);

struct TrainConfig {
  FilterVariant variant = FilterVariant::knet_kg;
  // Defaults to default_objective(variant) when unset.
  std::optional<TrainObjective> objective;

  int epochs = 100;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double val_fraction = 0.1;
  double clip_norm = 10.0;
  // Stop after this many epochs without validation improvement; 0 trains the
  // full schedule.
  int patience = 0;

  // Calibration weight ramp for emp / elbo: linear from beta_start to
  // beta_end over the first beta_ramp_fraction of the schedule, then flat.
  double beta_start = 0.1;
  double beta_end = 0.9;
  double beta_ramp_fraction = 0.6;

  // elbo: members of the relaxed-mask ensemble behind the data term, and the
  // regularizer constants.
  int train_ensemble_size = 8;
  double kl_c1 = 1e-4;
  double kl_c2 = 1e-4;
  // elbo: initial drop probability is drawn uniformly from this range.
  double dropout_p_init_min = 0.5;
  double dropout_p_init_max = 0.8;

  CovUpdateForm cov_form = CovUpdateForm::joseph;
  int hidden_dim = 0;  // 0 selects the architecture default
  double gain_out_scale = 1e-2;

  // Inference-time ensemble of the dropout variant.
  int ensemble_members = 20;
  bool per_step_masks = false;

  std::uint64_t seed = 0;

  TrainObjective resolved_objective() const;
  double beta_at(int epoch) const;  // epoch is 0-based
};

// Any filter variant behind one inference interface. Learned variants carry
// their network and frozen normalizer; the model-based filter only needs the
// model. Copyable via shared network ownership.
class TrainedFilter {
 public:
  // Model-based filter wrapper (nothing trained).
  static TrainedFilter make_ekf(const SSModelSpec& filter_model);

  // Posterior states and covariances for one trajectory. eval_seed drives
  // the mask draws of the dropout variant and is ignored elsewhere. Filters
  // that cannot produce covariances return them empty.
  FilterResult run(const Trajectory& traj, std::uint64_t eval_seed = 0) const;
  // Same pass under a different model of identical dimensions, e.g. the
  // nominal model of another noise level than the checkpoint default.
  FilterResult run(const SSModelSpec& model, const Trajectory& traj,
                   std::uint64_t eval_seed) const;

  // True when run() produces covariances for this variant and model.
  bool produces_covariance() const;

  FilterVariant variant() const { return variant_; }
  const SSModelSpec& filter_model() const { return filter_model_; }
  CovUpdateForm cov_form() const { return cov_form_; }
  const EnsembleConfig& ensemble() const { return ensemble_; }
  EnsembleConfig& ensemble() { return ensemble_; }
  const FeatureNormalizer& normalizer() const { return normalizer_; }
  void set_normalizer(FeatureNormalizer norm) { normalizer_ = std::move(norm); }

  GainNetwork* gain_net() { return gain_net_.get(); }
  const GainNetwork* gain_net() const { return gain_net_.get(); }
  SplitGainNetwork* split_net() { return split_net_.get(); }
  RecurrentTracker* tracker() { return tracker_.get(); }
  const RecurrentTracker* tracker() const { return tracker_.get(); }

  void save(const std::string& path) const;
  static TrainedFilter load(const std::string& path);

 private:
  friend TrainedFilter build_untrained(const SSModelSpec&, const TrainConfig&);

  FilterVariant variant_ = FilterVariant::ekf;
  SSModelSpec filter_model_;
  CovUpdateForm cov_form_ = CovUpdateForm::joseph;
  EnsembleConfig ensemble_;
  FeatureNormalizer normalizer_;
  std::shared_ptr<GainNetwork> gain_net_;
  std::shared_ptr<SplitGainNetwork> split_net_;
  std::shared_ptr<RecurrentTracker> tracker_;
};

// Freshly initialized filter for the given config: network built and seeded,
// normalizer not yet calibrated. Exposed for tests.
TrainedFilter build_untrained(const SSModelSpec& filter_model,
                              const TrainConfig& cfg);

struct TrainLogRow {
  int epoch = 0;  // 1-based in logs
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_mse_db = 0.0;
  double val_anees = 0.0;  // NaN without covariances
  double beta = 0.0;
  double wallclock_s = 0.0;
};

struct TrainResult {
  TrainedFilter filter;  // best-validation parameters restored
  std::vector<TrainLogRow> log;
  int best_epoch = 0;  // 1-based
  double best_val_loss = 0.0;
};

// Trains the configured variant on the dataset trajectories using the given
// filter-side model (the dataset may come from a mismatched generator). The
// last val_fraction of the trajectories is held out; the best epoch by
// validation loss is restored. Throws TrainError when the loss turns
// non-finite and ConfigError for inconsistent setups.
TrainResult train_filter(const SSModelSpec& filter_model, const Dataset& data,
                         const TrainConfig& cfg);

// Joint training over several noise levels: datasets[i] pairs with
// filter_models[i], the held-out split is taken per level, and one network
// is fit to the pooled trajectories. The first model becomes the
// checkpoint's default; run() with an explicit model serves the others.
TrainResult train_filter_multi(const std::vector<SSModelSpec>& filter_models,
                               const std::vector<Dataset>& datasets,
                               const TrainConfig& cfg);

// epoch,train_loss,val_loss,val_mse_db,val_anees,beta,wallclock_s
void write_train_log_csv(const std::string& path,
                         const std::vector<TrainLogRow>& log);

}  // namespace kalmanuq
