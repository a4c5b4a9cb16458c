#include "kalmanuq/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "kalmanuq/dataset_io.hpp"
#include "kalmanuq/ekf.hpp"
#include "kalmanuq/errors.hpp"
#include "kalmanuq/losses.hpp"
#include "kalmanuq/metrics.hpp"
#include "kalmanuq/optimizer.hpp"

namespace kalmanuq {

TrainObjective train_objective_from_string(const std::string& s) {
  if (s == "l2") return TrainObjective::l2;
  if (s == "m2") return TrainObjective::m2;
  if (s == "emp") return TrainObjective::emp;
  if (s == "gnll") return TrainObjective::gnll;
  if (s == "elbo") return TrainObjective::elbo;
  throw ConfigError("unknown training objective: " + s);
}

std::string to_string(TrainObjective objective) {
  switch (objective) {
    case TrainObjective::l2:
      return "l2";
    case TrainObjective::m2:
      return "m2";
    case TrainObjective::emp:
      return "emp";
    case TrainObjective::gnll:
      return "gnll";
    case TrainObjective::elbo:
      return "elbo";
  }
  throw ConfigError("unknown training objective");
}

TrainObjective default_objective(FilterVariant variant) {
  switch (variant) {
    case FilterVariant::knet_kg:
      return TrainObjective::l2;
    case FilterVariant::skn:
    case FilterVariant::blackbox:
      return TrainObjective::gnll;
    case FilterVariant::bkn:
      return TrainObjective::elbo;
    case FilterVariant::ekf:
      break;
  }
  throw ConfigError("the model-based filter has no training objective");
}

TrainObjective TrainConfig::resolved_objective() const {
  return objective ? *objective : default_objective(variant);
}

double TrainConfig::beta_at(int epoch) const {
  const int ramp = std::max(
      1, static_cast<int>(std::ceil(beta_ramp_fraction * epochs)));
  if (ramp <= 1) return beta_end;
  const double frac =
      std::min(1.0, static_cast<double>(epoch) / static_cast<double>(ramp - 1));
  return beta_start + (beta_end - beta_start) * frac;
}

TrainedFilter TrainedFilter::make_ekf(const SSModelSpec& filter_model) {
  validate_model(filter_model);
  TrainedFilter tf;
  tf.variant_ = FilterVariant::ekf;
  tf.filter_model_ = filter_model;
  return tf;
}

TrainedFilter build_untrained(const SSModelSpec& filter_model,
                              const TrainConfig& cfg) {
  validate_model(filter_model);
  if (cfg.variant == FilterVariant::ekf)
    throw ConfigError("the model-based filter has nothing to train");

  TrainedFilter tf;
  tf.variant_ = cfg.variant;
  tf.filter_model_ = filter_model;
  tf.cov_form_ = cfg.cov_form;
  tf.ensemble_.members = cfg.ensemble_members;
  tf.ensemble_.per_step_masks = cfg.per_step_masks;

  GainNetConfig net_cfg;
  net_cfg.state_dim = filter_model.state_dim;
  net_cfg.obs_dim = filter_model.obs_dim;
  net_cfg.hidden_dim = cfg.hidden_dim;
  net_cfg.gain_out_scale = cfg.gain_out_scale;
  net_cfg.init_seed = derive_seed(cfg.seed, 0x696E6974);
  // Unused dropout sites get a tiny but nonzero drop probability so their
  // logit stays finite through checkpoint serialization.
  net_cfg.dropout_p_init = 1e-12;
  if (cfg.variant == FilterVariant::bkn) {
    if (cfg.dropout_p_init_min > cfg.dropout_p_init_max ||
        cfg.dropout_p_init_min < 0.0 || cfg.dropout_p_init_max >= 1.0)
      throw ConfigError("dropout init range must satisfy 0 <= min <= max < 1");
    RandomStream p_rng(derive_seed(cfg.seed, 0x64726F70));
    net_cfg.dropout_p_init =
        p_rng.uniform_in(cfg.dropout_p_init_min, cfg.dropout_p_init_max);
    net_cfg.dropout_p_init_hidden =
        p_rng.uniform_in(cfg.dropout_p_init_min, cfg.dropout_p_init_max);
  }

  switch (cfg.variant) {
    case FilterVariant::knet_kg:
    case FilterVariant::bkn:
      tf.gain_net_ = std::make_shared<GainNetwork>(net_cfg);
      break;
    case FilterVariant::skn:
      tf.split_net_ = std::make_shared<SplitGainNetwork>(net_cfg);
      break;
    case FilterVariant::blackbox:
      tf.tracker_ = std::make_shared<RecurrentTracker>(net_cfg);
      break;
    default:
      break;
  }
  return tf;
}

bool TrainedFilter::produces_covariance() const {
  if (variant_ == FilterVariant::knet_kg)
    return filter_model_.state_dim <= filter_model_.obs_dim;
  return true;
}

FilterResult TrainedFilter::run(const Trajectory& traj,
                                std::uint64_t eval_seed) const {
  return run(filter_model_, traj, eval_seed);
}

FilterResult TrainedFilter::run(const SSModelSpec& model,
                                const Trajectory& traj,
                                std::uint64_t eval_seed) const {
  if (model.state_dim != filter_model_.state_dim ||
      model.obs_dim != filter_model_.obs_dim)
    throw ConfigError("model dimensions disagree with the trained filter");
  switch (variant_) {
    case FilterVariant::ekf:
      return run_ekf(model, traj.x0, traj.observations);
    case FilterVariant::knet_kg: {
      LearnedRunOutput out =
          run_gain_filter(model, traj.x0, traj.observations, *gain_net_,
                          normalizer_, DropoutMode::off, {});
      FilterResult r = out.to_result();
      try {
        r.covs = extract_cov_sequence(model, out.priors, out.gains, cov_form_);
      } catch (const UnrecoverableCovariance&) {
        r.covs.clear();  // calibration metrics degrade to NaN
      }
      return r;
    }
    case FilterVariant::skn:
      return run_split_filter(model, traj.x0, traj.observations, *split_net_,
                              normalizer_, cov_form_)
          .to_result();
    case FilterVariant::blackbox:
      return run_tracker(traj.x0, traj.observations, *tracker_, normalizer_)
          .to_result();
    case FilterVariant::bkn: {
      RandomStream rng(eval_seed);
      return run_dropout_ensemble(model, traj.x0, traj.observations,
                                  *gain_net_, normalizer_, ensemble_, rng)
          .combined;
    }
  }
  throw ConfigError("unknown filter variant");
}

namespace {

ParameterSet* variant_params(TrainedFilter& tf) {
  if (tf.gain_net()) return &tf.gain_net()->params();
  if (tf.split_net()) return &tf.split_net()->params();
  if (tf.tracker()) return &tf.tracker()->params();
  return nullptr;
}

}  // namespace

void TrainedFilter::save(const std::string& path) const {
  Checkpoint ckpt;
  const ParameterSet* params = nullptr;
  if (gain_net_) params = &gain_net_->params();
  if (split_net_) params = &split_net_->params();
  if (tracker_) params = &tracker_->params();
  if (params) ckpt = Checkpoint::from_params(*params);

  if (normalizer_.fitted())
    ckpt.buffers["normalizer.inv_std"] = normalizer_.inv_std();

  ckpt.meta["variant"] = kalmanuq::to_string(variant_);
  ckpt.meta["model_tag"] = kalmanuq::to_string(filter_model_.tag);
  ckpt.meta["snr_db"] = format_value(filter_model_.snr_db);
  ckpt.meta["state_dim"] = std::to_string(filter_model_.state_dim);
  ckpt.meta["obs_dim"] = std::to_string(filter_model_.obs_dim);
  ckpt.meta["cov_form"] = kalmanuq::to_string(cov_form_);
  ckpt.meta["ensemble_members"] = std::to_string(ensemble_.members);
  ckpt.meta["per_step_masks"] = ensemble_.per_step_masks ? "1" : "0";
  int hidden = 0;
  double out_scale = 0.0;
  if (gain_net_) {
    hidden = gain_net_->config().resolved_hidden();
    out_scale = gain_net_->config().gain_out_scale;
  } else if (split_net_) {
    hidden = split_net_->config().resolved_hidden();
  } else if (tracker_) {
    hidden = tracker_->config().resolved_hidden();
  }
  ckpt.meta["hidden_dim"] = std::to_string(hidden);
  ckpt.meta["gain_out_scale"] = format_value(out_scale);

  save_checkpoint(ckpt, path);
}

TrainedFilter TrainedFilter::load(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  auto meta = [&](const std::string& key) -> const std::string& {
    auto it = ckpt.meta.find(key);
    if (it == ckpt.meta.end())
      throw IoError("checkpoint is missing metadata key: " + key);
    return it->second;
  };

  const FilterVariant variant = filter_variant_from_string(meta("variant"));
  const ModelTag tag = model_tag_from_string(meta("model_tag"));
  const double snr_db = std::stod(meta("snr_db"));
  const SSModelSpec model = make_model(tag, snr_db);
  if (model.state_dim != std::stoi(meta("state_dim")) ||
      model.obs_dim != std::stoi(meta("obs_dim")))
    throw IoError("checkpoint dimensions disagree with the model tag");

  if (variant == FilterVariant::ekf) return make_ekf(model);

  TrainConfig cfg;
  cfg.variant = variant;
  cfg.hidden_dim = std::stoi(meta("hidden_dim"));
  if (variant == FilterVariant::knet_kg || variant == FilterVariant::bkn)
    cfg.gain_out_scale = std::stod(meta("gain_out_scale"));
  cfg.cov_form = cov_update_form_from_string(meta("cov_form"));
  cfg.ensemble_members = std::stoi(meta("ensemble_members"));
  cfg.per_step_masks = meta("per_step_masks") == "1";
  // Dropout parameters come back through the checkpoint below; the init
  // range only matters for fresh networks.
  cfg.dropout_p_init_min = 0.5;
  cfg.dropout_p_init_max = 0.5;

  TrainedFilter tf = build_untrained(model, cfg);
  ParameterSet* params = variant_params(tf);
  ckpt.apply_to(*params);

  auto buf = ckpt.buffers.find("normalizer.inv_std");
  if (buf != ckpt.buffers.end())
    tf.set_normalizer(FeatureNormalizer(buf->second.col(0)));
  return tf;
}

namespace {

// One trajectory paired with the nominal model of its noise level.
struct TrainSample {
  const SSModelSpec* model = nullptr;
  const Trajectory* traj = nullptr;
};

struct ObjectiveContext {
  TrainedFilter* tf = nullptr;
  TrainObjective objective = TrainObjective::l2;
  double beta = 0.0;
  double inv_batch = 1.0;  // 1 / batch size
  CovUpdateForm cov_form = CovUpdateForm::joseph;
  // elbo: shared mask schedules of the relaxed ensemble, one per member.
  const std::vector<MaskSchedule>* member_masks = nullptr;
};

// Builds the scaled loss contribution of one trajectory. Mean-style terms
// (l2, gnll) carry 1/B; the variance matching term is an unnormalized sum by
// construction.
Value trajectory_loss(const ObjectiveContext& ctx, const TrainSample& sample) {
  TrainedFilter& tf = *ctx.tf;
  const SSModelSpec& model = *sample.model;
  const Trajectory& traj = *sample.traj;

  if (ctx.objective == TrainObjective::elbo) {
    const std::vector<MaskSchedule>& masks = *ctx.member_masks;
    const int members = static_cast<int>(masks.size());
    std::vector<std::vector<Value>> member_states(members);
    for (int j = 0; j < members; ++j)
      member_states[j] =
          run_gain_filter(model, traj.x0, traj.observations, *tf.gain_net(),
                          tf.normalizer(), DropoutMode::train_relaxed,
                          masks[j])
              .states;

    const std::size_t T = traj.observations.size();
    std::vector<Value> means(T), var_diags(T);
    std::vector<Value> column(members);
    for (std::size_t t = 0; t < T; ++t) {
      for (int j = 0; j < members; ++j) column[j] = member_states[j][t];
      means[t] = graph_ensemble_mean(column);
      var_diags[t] = graph_ensemble_var_diag(column, means[t]);
    }
    Value l2 = l2_term(means, traj.states);
    Value m2 = m2_term(means, traj.states, var_diags);
    return ((1.0 - ctx.beta) * ctx.inv_batch) * l2 + ctx.beta * m2;
  }

  std::vector<Value> states;
  std::vector<Value> covs;
  const bool needs_cov = ctx.objective != TrainObjective::l2;
  switch (tf.variant()) {
    case FilterVariant::knet_kg: {
      LearnedRunOutput out =
          needs_cov
              ? run_gain_filter_with_cov(model, traj.x0, traj.observations,
                                         *tf.gain_net(), tf.normalizer(),
                                         ctx.cov_form)
              : run_gain_filter(model, traj.x0, traj.observations,
                                *tf.gain_net(), tf.normalizer(),
                                DropoutMode::off, {});
      states = std::move(out.states);
      covs = std::move(out.covs);
      break;
    }
    case FilterVariant::skn: {
      LearnedRunOutput out =
          run_split_filter(model, traj.x0, traj.observations, *tf.split_net(),
                           tf.normalizer(), ctx.cov_form);
      states = std::move(out.states);
      covs = std::move(out.covs);
      break;
    }
    case FilterVariant::blackbox: {
      LearnedRunOutput out = run_tracker(traj.x0, traj.observations,
                                         *tf.tracker(), tf.normalizer());
      states = std::move(out.states);
      covs = std::move(out.covs);
      break;
    }
    default:
      throw ConfigError("variant cannot be trained with this objective");
  }

  switch (ctx.objective) {
    case TrainObjective::l2:
      return ctx.inv_batch * l2_term(states, traj.states);
    case TrainObjective::m2: {
      std::vector<Value> diags;
      diags.reserve(covs.size());
      for (const Value& c : covs) diags.push_back(diag_of(c));
      return m2_term(states, traj.states, diags);
    }
    case TrainObjective::emp: {
      std::vector<Value> diags;
      diags.reserve(covs.size());
      for (const Value& c : covs) diags.push_back(diag_of(c));
      Value l2 = l2_term(states, traj.states);
      Value m2 = m2_term(states, traj.states, diags);
      return ((1.0 - ctx.beta) * ctx.inv_batch) * l2 + ctx.beta * m2;
    }
    case TrainObjective::gnll:
      return ctx.inv_batch * gnll_term(states, traj.states, covs);
    default:
      throw ConfigError("unreachable objective");
  }
}

// Regularizer of every dropout site, summed; graph-valued so it can be
// recorded and differentiated.
Value kl_total(const GainNetwork& net, double c1, double c2) {
  Value total;
  for (const GainNetwork::RegularizerSite& site : net.regularizer_sites()) {
    Value term =
        kl_term(site.weight_norm_sq, site.logit_p, site.n_inputs, c1, c2);
    total = total.defined() ? total + term : term;
  }
  return total;
}

// Numeric validation loss over the held-out set, evaluated as one batch.
// Same composition as the training objective so epochs are comparable; for
// elbo the member masks are redrawn from a fixed stream every call.
double validation_loss(TrainedFilter& tf, const ObjectiveContext& ctx,
                       const std::vector<TrainSample>& val,
                       const TrainConfig& cfg) {
  if (ctx.objective == TrainObjective::elbo) {
    RandomStream mask_rng(derive_seed(cfg.seed, 0x76616C6D));
    const std::vector<MaskSchedule> masks = sample_mask_schedules(
        *tf.gain_net(), cfg.train_ensemble_size,
        static_cast<int>(val.front().traj->observations.size()), false,
        mask_rng);

    StateBatch means_b, targets_b;
    CovBatch covs_b;
    for (const TrainSample& sample : val) {
      const Trajectory& traj = *sample.traj;
      std::vector<std::vector<Eigen::VectorXd>> member(masks.size());
      for (std::size_t j = 0; j < masks.size(); ++j) {
        LearnedRunOutput out = run_gain_filter(
            *sample.model, traj.x0, traj.observations, *tf.gain_net(),
            tf.normalizer(), DropoutMode::train_relaxed, masks[j]);
        member[j].reserve(out.states.size());
        for (const Value& s : out.states)
          member[j].push_back(s.value().col(0));
      }
      const std::size_t T = traj.observations.size();
      StateSeq means(T);
      CovSeq covs(T);
      std::vector<Eigen::VectorXd> column(masks.size());
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < masks.size(); ++j)
          column[j] = member[j][t];
        means[t] = ensemble_mean(column);
        covs[t] = ensemble_cov(column, means[t]);
      }
      means_b.push_back(std::move(means));
      covs_b.push_back(std::move(covs));
      targets_b.push_back(traj.states);
    }
    // Same composition as one training batch over the whole held-out set:
    // the l2 part is a mean, the variance matching part an unnormalized sum.
    double kl = 0.0;
    for (const GainNetwork::RegularizerSite& site :
         tf.gain_net()->regularizer_sites()) {
      const double p =
          1.0 / (1.0 + std::exp(-site.logit_p.value()(0, 0)));
      kl += kl_layer(site.weight_norm_sq.scalar(), p, site.n_inputs,
                     cfg.kl_c1, cfg.kl_c2);
    }
    return (1.0 - ctx.beta) * loss_l2(means_b, targets_b) +
           ctx.beta * loss_m2(means_b, targets_b, covs_b) + kl;
  }

  StateBatch preds_b, targets_b;
  CovBatch covs_b;
  const bool needs_cov = ctx.objective != TrainObjective::l2;
  for (const TrainSample& sample : val) {
    const Trajectory& traj = *sample.traj;
    StateSeq states;
    CovSeq covs;
    switch (tf.variant()) {
      case FilterVariant::knet_kg: {
        if (needs_cov) {
          LearnedRunOutput out = run_gain_filter_with_cov(
              *sample.model, traj.x0, traj.observations, *tf.gain_net(),
              tf.normalizer(), ctx.cov_form);
          FilterResult r = out.to_result();
          states = std::move(r.states);
          covs = std::move(r.covs);
        } else {
          LearnedRunOutput out = run_gain_filter(
              *sample.model, traj.x0, traj.observations, *tf.gain_net(),
              tf.normalizer(), DropoutMode::off, {});
          states = std::move(out.to_result().states);
        }
        break;
      }
      case FilterVariant::skn: {
        FilterResult r =
            run_split_filter(*sample.model, traj.x0, traj.observations,
                             *tf.split_net(), tf.normalizer(), ctx.cov_form)
                .to_result();
        states = std::move(r.states);
        covs = std::move(r.covs);
        break;
      }
      case FilterVariant::blackbox: {
        FilterResult r = run_tracker(traj.x0, traj.observations,
                                     *tf.tracker(), tf.normalizer())
                             .to_result();
        states = std::move(r.states);
        covs = std::move(r.covs);
        break;
      }
      default:
        throw ConfigError("variant cannot be validated with this objective");
    }
    preds_b.push_back(std::move(states));
    covs_b.push_back(std::move(covs));
    targets_b.push_back(traj.states);
  }

  switch (ctx.objective) {
    case TrainObjective::l2:
      return loss_l2(preds_b, targets_b);
    case TrainObjective::m2:
      return loss_m2(preds_b, targets_b, covs_b);
    case TrainObjective::emp: {
      const double l2 = loss_l2(preds_b, targets_b);
      const double m2 = loss_m2(preds_b, targets_b, covs_b);
      return (1.0 - ctx.beta) * l2 + ctx.beta * m2;
    }
    case TrainObjective::gnll:
      return loss_gnll(preds_b, targets_b, covs_b);
    default:
      throw ConfigError("unreachable objective");
  }
}

void fit_normalizer(TrainedFilter& tf,
                    const std::vector<TrainSample>& train) {
  constexpr std::size_t kCalibrationRuns = 32;
  const std::size_t runs = std::min(kCalibrationRuns, train.size());
  std::vector<Eigen::VectorXd> samples;

  // Spread the calibration runs over the whole list so every noise level of
  // a pooled training set contributes.
  const std::size_t stride = std::max<std::size_t>(1, train.size() / runs);
  if (tf.variant() == FilterVariant::blackbox) {
    for (std::size_t i = 0; i < train.size(); i += stride)
      for (const Eigen::VectorXd& y : train[i].traj->observations)
        samples.push_back(y);
  } else {
    const FeatureNormalizer identity;  // dry run on raw features
    for (std::size_t i = 0; i < train.size(); i += stride) {
      const Trajectory& traj = *train[i].traj;
      if (tf.variant() == FilterVariant::skn) {
        run_split_filter(*train[i].model, traj.x0, traj.observations,
                         *tf.split_net(), identity, CovUpdateForm::standard,
                         &samples);
      } else {
        run_gain_filter(*train[i].model, traj.x0, traj.observations,
                        *tf.gain_net(), identity, DropoutMode::off, {},
                        &samples);
      }
    }
  }
  tf.set_normalizer(FeatureNormalizer::fit(samples));
}

}  // namespace

TrainResult train_filter_multi(const std::vector<SSModelSpec>& filter_models,
                               const std::vector<Dataset>& datasets,
                               const TrainConfig& cfg) {
  if (filter_models.empty() || filter_models.size() != datasets.size())
    throw ConfigError("training needs matching model and dataset lists");
  for (const SSModelSpec& model : filter_models) validate_model(model);
  if (cfg.variant == FilterVariant::ekf)
    throw ConfigError("the model-based filter has nothing to train");
  if (cfg.epochs < 1) throw ConfigError("epochs must be at least 1");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (cfg.val_fraction <= 0.0 || cfg.val_fraction >= 1.0)
    throw ConfigError("validation fraction must lie strictly inside (0, 1)");

  const SSModelSpec& reference = filter_models.front();
  for (const SSModelSpec& model : filter_models)
    if (model.state_dim != reference.state_dim ||
        model.obs_dim != reference.obs_dim)
      throw ConfigError("all training models must share their dimensions");
  for (std::size_t g = 0; g < datasets.size(); ++g) {
    if (datasets[g].model.obs_dim != reference.obs_dim)
      throw ConfigError(
          "dataset and filter model disagree in observation size");
    for (const Trajectory& traj : datasets[g].trajectories)
      if (traj.x0.size() != reference.state_dim)
        throw ConfigError(
            "dataset states do not live in the filter state space; project "
            "the dataset first");
  }

  const TrainObjective objective = cfg.resolved_objective();
  if ((objective == TrainObjective::elbo) !=
      (cfg.variant == FilterVariant::bkn))
    throw ConfigError(
        "the elbo objective and the dropout variant go together; pick "
        "another objective or the bkn variant");
  if (cfg.variant == FilterVariant::knet_kg &&
      objective != TrainObjective::l2 &&
      reference.state_dim > reference.obs_dim)
    throw ConfigError(
        "covariance supervision of the gain network needs a full-column-rank "
        "observation Jacobian; this model observes fewer components than it "
        "tracks");

  // Held-out split per noise level, so validation covers the same mix.
  std::vector<TrainSample> train_set, val_set;
  int horizon = 0;
  for (std::size_t g = 0; g < datasets.size(); ++g) {
    const Dataset& data = datasets[g];
    if (data.count() < 2)
      throw ConfigError("every dataset needs at least two trajectories");
    horizon = std::max(horizon, data.horizon);
    const int count = data.count();
    const int val_count = std::clamp(
        static_cast<int>(std::lround(cfg.val_fraction * count)), 1,
        count - 1);
    for (int i = 0; i < count - val_count; ++i)
      train_set.push_back({&filter_models[g], &data.trajectories[i]});
    for (int i = count - val_count; i < count; ++i)
      val_set.push_back({&filter_models[g], &data.trajectories[i]});
  }

  TrainedFilter tf = build_untrained(reference, cfg);
  fit_normalizer(tf, train_set);

  ParameterSet& params = *variant_params(tf);
  AdamOptimizer opt({.lr = cfg.learning_rate});

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Eigen::MatrixXd> best_snapshot = params.snapshot();
  int best_epoch = 0;
  long batch_counter = 0;

  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    ObjectiveContext ctx;
    ctx.tf = &tf;
    ctx.objective = objective;
    ctx.beta = cfg.beta_at(epoch);
    ctx.cov_form = cfg.cov_form;

    std::vector<int> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i)
      order[i] = static_cast<int>(i);
    RandomStream shuffle_rng(derive_seed(cfg.seed, 0x73687566, epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_index(i)]);

    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size, ++batch_counter) {
      const std::size_t stop =
          std::min(start + static_cast<std::size_t>(cfg.batch_size),
                   order.size());
      const int batch = static_cast<int>(stop - start);
      ctx.inv_batch = 1.0 / static_cast<double>(batch);

      std::vector<MaskSchedule> member_masks;
      if (objective == TrainObjective::elbo) {
        RandomStream mask_rng(
            derive_seed(cfg.seed, 0x6D61736B, batch_counter));
        member_masks = sample_mask_schedules(
            *tf.gain_net(), cfg.train_ensemble_size, horizon, false,
            mask_rng);
        ctx.member_masks = &member_masks;
      }

      params.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t i = start; i < stop; ++i) {
        Tape tape;
        TapeScope scope(tape);
        Value contrib = trajectory_loss(ctx, train_set[order[i]]);
        const double v = contrib.scalar();
        if (!std::isfinite(v))
          throw TrainError("training loss turned non-finite", epoch + 1);
        batch_loss += v;
        tape.backward(contrib);
      }
      if (objective == TrainObjective::elbo) {
        Tape tape;
        TapeScope scope(tape);
        Value kl = kl_total(*tf.gain_net(), cfg.kl_c1, cfg.kl_c2);
        const double v = kl.scalar();
        if (!std::isfinite(v))
          throw TrainError("regularizer turned non-finite", epoch + 1);
        batch_loss += v;
        tape.backward(kl);
      }

      params.clip_grad(cfg.clip_norm);
      try {
        opt.step(params);
      } catch (const TrainError& e) {
        throw TrainError(e.what(), epoch + 1);
      }
      loss_sum += batch_loss;
      ++batches;
    }

    // Held-out diagnostics. Seeds are fixed per trajectory index so curves
    // are comparable across epochs.
    ctx.member_masks = nullptr;
    const double val_loss = validation_loss(tf, ctx, val_set, cfg);
    if (!std::isfinite(val_loss))
      throw TrainError("validation loss turned non-finite", epoch + 1);

    StateBatch errors_b, preds_b, targets_b;
    CovBatch covs_b;
    bool have_covs = true;
    for (std::size_t i = 0; i < val_set.size(); ++i) {
      const Trajectory& traj = *val_set[i].traj;
      FilterResult r = tf.run(*val_set[i].model, traj,
                              derive_seed(cfg.seed, 0x6576616C, i));
      StateSeq errors(r.states.size());
      for (std::size_t t = 0; t < r.states.size(); ++t)
        errors[t] = r.states[t] - traj.states[t];
      preds_b.push_back(std::move(r.states));
      targets_b.push_back(traj.states);
      errors_b.push_back(std::move(errors));
      if (r.covs.empty())
        have_covs = false;
      else
        covs_b.push_back(std::move(r.covs));
    }
    const MseResult mse = compute_mse(preds_b, targets_b);
    double val_anees = std::numeric_limits<double>::quiet_NaN();
    if (have_covs) {
      // Extracted covariances of a far-from-converged gain can be
      // indefinite; the diagnostic degrades to NaN rather than aborting.
      try {
        val_anees = compute_anees(errors_b, covs_b).anees;
      } catch (const NumericalError&) {
      }
    }

    TrainLogRow row;
    row.epoch = epoch + 1;
    row.train_loss = loss_sum / std::max(1, batches);
    row.val_loss = val_loss;
    row.val_mse_db = mse.db;
    row.val_anees = val_anees;
    row.beta = ctx.beta;
    row.wallclock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    result.log.push_back(row);

    if (val_loss < best_val) {
      best_val = val_loss;
      best_epoch = epoch + 1;
      best_snapshot = params.snapshot();
    } else if (cfg.patience > 0 && epoch + 1 - best_epoch >= cfg.patience) {
      break;
    }
  }

  params.restore(best_snapshot);
  result.filter = std::move(tf);
  result.best_epoch = best_epoch;
  result.best_val_loss = best_val;
  return result;
}

TrainResult train_filter(const SSModelSpec& filter_model, const Dataset& data,
                         const TrainConfig& cfg) {
  return train_filter_multi({filter_model}, {data}, cfg);
}

void write_train_log_csv(const std::string& path,
                         const std::vector<TrainLogRow>& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open train log for writing: " + path);
  out << "epoch,train_loss,val_loss,val_mse_db,val_anees,beta,wallclock_s\n";
  for (const TrainLogRow& row : log) {
    out << row.epoch << ',' << format_value(row.train_loss) << ','
        << format_value(row.val_loss) << ',' << format_value(row.val_mse_db)
        << ',' << format_value(row.val_anees) << ',' << format_value(row.beta)
        << ',' << format_value(row.wallclock_s) << '\n';
  }
  if (!out.good()) throw IoError("failed writing train log: " + path);
}

}  // namespace kalmanuq
