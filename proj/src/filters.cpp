#include "kalmanuq/filters.hpp"

#include "kalmanuq/errors.hpp"

namespace kalmanuq {

FilterVariant filter_variant_from_string(const std::string& s) {
  if (s == "ekf") return FilterVariant::ekf;
  if (s == "knet_kg") return FilterVariant::knet_kg;
  if (s == "skn") return FilterVariant::skn;
  if (s == "blackbox") return FilterVariant::blackbox;
  if (s == "bkn") return FilterVariant::bkn;
  throw ConfigError("unknown filter variant: " + s);
}

std::string to_string(FilterVariant v) {
  switch (v) {
    case FilterVariant::ekf:
      return "ekf";
    case FilterVariant::knet_kg:
      return "knet_kg";
    case FilterVariant::skn:
      return "skn";
    case FilterVariant::blackbox:
      return "blackbox";
    case FilterVariant::bkn:
      return "bkn";
  }
  throw ConfigError("unknown filter variant");
}

Value KnetFeatures::stacked() const { return vcat({dx, dy_innov, dy_diff}); }

KnetFeatures compute_features(const FeatureHistory& history) {
  const Eigen::Index m = history.x_prev.value().rows();
  const Eigen::Index n = history.y_curr.size();

  KnetFeatures f;
  if (history.t == 0) {
    // First step: no history exists; every block is zero.
    f.dx = Value::constant(Eigen::VectorXd::Zero(m));
    f.dy_innov = Value::constant(Eigen::VectorXd::Zero(n));
    f.dy_diff = Value::constant(Eigen::VectorXd::Zero(n));
    return f;
  }
  f.dx = history.x_prev - history.x_prev2;
  f.dy_innov = Value::constant(history.y_curr) - history.y_pred;
  f.dy_diff = Value::constant(history.y_curr - history.y_prev);
  return f;
}

namespace {

void check_net_dims(const GainNetConfig& config, const SSModelSpec& model) {
  if (config.state_dim != model.state_dim ||
      config.obs_dim != model.obs_dim)
    throw ConfigError("network dimensions do not match the filter model");
}

}  // namespace

GainNetwork::GainNetwork(const GainNetConfig& config) : config_(config) {
  if (config.state_dim <= 0 || config.obs_dim <= 0)
    throw ConfigError("network dimensions must be positive");
  const int hidden = config_.resolved_hidden();
  const int features = config_.feature_dim();
  RandomStream init_rng(derive_seed(config.init_seed, 0x6E65));

  const double p_hidden = config.dropout_p_init_hidden < 0
                              ? config.dropout_p_init
                              : config.dropout_p_init_hidden;
  drop_in_ = std::make_unique<ConcreteDropoutLayer>(
      params_, "dropout_input", features, config.dropout_p_init);
  fc_in_ = std::make_unique<DenseLayer>(params_, "input_fc", features, hidden,
                                        Activation::relu, init_rng);
  gru_ = std::make_unique<GRUCell>(params_, "gru", hidden, hidden, init_rng);
  drop_out_ = std::make_unique<ConcreteDropoutLayer>(
      params_, "dropout_hidden", hidden, p_hidden);
  fc_out_ = std::make_unique<DenseLayer>(
      params_, "gain_fc", hidden, config.state_dim * config.obs_dim,
      Activation::none, init_rng, config.gain_out_scale);
}

GainNetwork::Step GainNetwork::step(const Value& features, const Value& h_prev,
                                    DropoutMode mode,
                                    const MaskSet* masks) const {
  const MaskDraw* min = nullptr;
  const MaskDraw* mhid = nullptr;
  if (mode != DropoutMode::off) {
    if (masks == nullptr)
      throw ConfigError("dropout mode requires mask draws");
    min = &masks->input;
    mhid = &masks->hidden;
  }
  Value a = drop_in_->apply(features, mode, min);
  Value u = fc_in_->forward(a);
  Value h = gru_->forward(u, h_prev);
  Value b = drop_out_->apply(h, mode, mhid);
  Value gain_vec = fc_out_->forward(b);

  Step out;
  out.gain = reshape(gain_vec, config_.state_dim, config_.obs_dim);
  out.hidden = h;
  return out;
}

std::vector<GainNetwork::RegularizerSite> GainNetwork::regularizer_sites()
    const {
  return {
      {fc_in_->weight_norm_sq(), drop_in_->logit_p(), drop_in_->width()},
      {fc_out_->weight_norm_sq(), drop_out_->logit_p(), drop_out_->width()},
  };
}

SplitGainNetwork::SplitGainNetwork(const GainNetConfig& config)
    : config_(config) {
  if (config.state_dim <= 0 || config.obs_dim <= 0)
    throw ConfigError("network dimensions must be positive");
  const int hidden = config_.resolved_hidden();
  const int features = config_.feature_dim();
  const int m = config.state_dim;
  const int n = config.obs_dim;
  RandomStream init_rng(derive_seed(config.init_seed, 0x736B));

  fc_in_ = std::make_unique<DenseLayer>(params_, "input_fc", features, hidden,
                                        Activation::relu, init_rng);
  gru_ = std::make_unique<GRUCell>(params_, "gru", hidden, hidden, init_rng);
  head_prior_ = std::make_unique<DenseLayer>(params_, "prior_head", hidden,
                                             m * (m + 1) / 2,
                                             Activation::none, init_rng);
  head_innov_ = std::make_unique<DenseLayer>(params_, "innov_head", hidden,
                                             n * (n + 1) / 2,
                                             Activation::none, init_rng);
}

SplitGainNetwork::Step SplitGainNetwork::step(const Value& features,
                                              const Value& h_prev) const {
  constexpr double kDiagFloor = 1e-6;
  Value u = fc_in_->forward(features);
  Value h = gru_->forward(u, h_prev);
  Value lp = lower_triangular(head_prior_->forward(h), config_.state_dim,
                              kDiagFloor);
  Value ls = lower_triangular(head_innov_->forward(h), config_.obs_dim,
                              kDiagFloor);
  Step out;
  out.prior_cov = lp * transpose(lp);
  out.innov_cov = ls * transpose(ls);
  out.hidden = h;
  return out;
}

RecurrentTracker::RecurrentTracker(const GainNetConfig& config)
    : config_(config) {
  if (config.state_dim <= 0 || config.obs_dim <= 0)
    throw ConfigError("network dimensions must be positive");
  const int hidden = config_.resolved_hidden();
  RandomStream init_rng(derive_seed(config.init_seed, 0x7472));

  init_state_ = std::make_unique<DenseLayer>(params_, "init_fc",
                                             config.state_dim, hidden,
                                             Activation::tanh, init_rng);
  gru_ = std::make_unique<GRUCell>(params_, "gru", config.obs_dim, hidden,
                                   init_rng);
  head_state_ = std::make_unique<DenseLayer>(params_, "state_head", hidden,
                                             config.state_dim,
                                             Activation::none, init_rng);
  head_logvar_ = std::make_unique<DenseLayer>(params_, "logvar_head", hidden,
                                              config.state_dim,
                                              Activation::none, init_rng);
}

RecurrentTracker::Step RecurrentTracker::step(const Value& y_norm,
                                              const Value& h_prev) const {
  Value h = gru_->forward(y_norm, h_prev);
  Step out;
  out.state = head_state_->forward(h);
  out.log_var = head_logvar_->forward(h);
  out.hidden = h;
  return out;
}

Value RecurrentTracker::initial_hidden(const Eigen::VectorXd& x0) const {
  return init_state_->forward(Value::constant(x0));
}

FilterResult LearnedRunOutput::to_result() const {
  FilterResult r;
  r.states.reserve(states.size());
  for (const Value& s : states) r.states.push_back(s.value().col(0));
  r.covs.reserve(covs.size());
  for (const Value& c : covs) r.covs.push_back(c.value());
  return r;
}

namespace {

// Shared learned-gain loop. with_cov enables the per-step differentiable
// extraction chain (prior from the gain, posterior in the given form).
LearnedRunOutput run_gain_filter_impl(const SSModelSpec& model,
                                      const Eigen::VectorXd& x0,
                                      const std::vector<Eigen::VectorXd>& obs,
                                      const GainNetwork& net,
                                      const FeatureNormalizer& norm,
                                      DropoutMode mode,
                                      const MaskSchedule& masks, bool with_cov,
                                      CovUpdateForm form,
                                      std::vector<Eigen::VectorXd>* raw_features) {
  check_net_dims(net.config(), model);
  if (x0.size() != model.state_dim)
    throw ConfigError("x0 dimension mismatch");
  const int m = model.state_dim;
  const int n = model.obs_dim;

  LearnedRunOutput out;
  out.states.reserve(obs.size());
  out.gains.reserve(obs.size());
  out.priors.reserve(obs.size());
  if (with_cov) out.covs.reserve(obs.size());

  FeatureHistory hist;
  hist.t = 0;
  hist.x_prev = Value::constant(x0);
  Value h = net.initial_hidden();

  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Eigen::VectorXd& y = obs[i];
    if (y.size() != n) throw ConfigError("observation dimension mismatch");

    Value x_prior = apply_f(model, hist.x_prev);
    Value y_pred = apply_h(model, x_prior);
    hist.y_pred = y_pred;
    hist.y_curr = y;

    Value raw = compute_features(hist).stacked();
    if (raw_features) raw_features->push_back(raw.value().col(0));
    Value feats = norm.apply(raw);
    GainNetwork::Step st =
        net.step(feats, h, mode, masks.at(static_cast<int>(i)));
    h = st.hidden;

    Value innovation = Value::constant(y) - y_pred;
    Value x_post = x_prior + st.gain * innovation;

    if (with_cov) {
      // Optimal-gain inversion needs a full-column-rank Jacobian.
      const Eigen::MatrixXd h_jac = model.jac_h(x_prior.value().col(0));
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(h_jac);
      const auto& sv = svd.singularValues();
      if (m > n || sv(sv.size() - 1) <= 1e-12 * sv(0))
        throw UnrecoverableCovariance(
            "observation Jacobian is rank deficient; covariance cannot be "
            "extracted from the gain");
      const Eigen::MatrixXd rh_proj =
          model.R * h_jac *
          (h_jac.transpose() * h_jac)
              .ldlt()
              .solve(Eigen::MatrixXd::Identity(m, m));
      Value ikh = Value::constant(Eigen::MatrixXd::Identity(m, m)) -
                  st.gain * Value::constant(h_jac);
      Value prior_cov =
          inverse(ikh) * st.gain * Value::constant(rh_proj);
      Value post_cov;
      if (form == CovUpdateForm::standard) {
        post_cov = ikh * prior_cov;
      } else {
        post_cov = st.gain * Value::constant(model.R) * transpose(st.gain) +
                   ikh * prior_cov * transpose(ikh);
      }
      out.covs.push_back(post_cov);
    }

    out.states.push_back(x_post);
    out.gains.push_back(st.gain.value());
    out.priors.push_back(x_prior.value().col(0));

    hist.x_prev2 = hist.x_prev;
    hist.x_prev = x_post;
    hist.y_prev = y;
    hist.t = static_cast<int>(i) + 1;
  }
  return out;
}

}  // namespace

LearnedRunOutput run_gain_filter(const SSModelSpec& filter_model,
                                 const Eigen::VectorXd& x0,
                                 const std::vector<Eigen::VectorXd>& obs,
                                 const GainNetwork& net,
                                 const FeatureNormalizer& norm,
                                 DropoutMode mode, const MaskSchedule& masks,
                                 std::vector<Eigen::VectorXd>* raw_features) {
  return run_gain_filter_impl(filter_model, x0, obs, net, norm, mode, masks,
                              false, CovUpdateForm::standard, raw_features);
}

LearnedRunOutput run_gain_filter_with_cov(
    const SSModelSpec& filter_model, const Eigen::VectorXd& x0,
    const std::vector<Eigen::VectorXd>& obs, const GainNetwork& net,
    const FeatureNormalizer& norm, CovUpdateForm form) {
  return run_gain_filter_impl(filter_model, x0, obs, net, norm,
                              DropoutMode::off, MaskSchedule{}, true, form,
                              nullptr);
}

LearnedRunOutput run_split_filter(const SSModelSpec& model,
                                  const Eigen::VectorXd& x0,
                                  const std::vector<Eigen::VectorXd>& obs,
                                  const SplitGainNetwork& net,
                                  const FeatureNormalizer& norm,
                                  CovUpdateForm form,
                                  std::vector<Eigen::VectorXd>* raw_features) {
  check_net_dims(net.config(), model);
  if (x0.size() != model.state_dim)
    throw ConfigError("x0 dimension mismatch");
  const int m = model.state_dim;
  const int n = model.obs_dim;

  LearnedRunOutput out;
  out.states.reserve(obs.size());
  out.covs.reserve(obs.size());
  out.gains.reserve(obs.size());
  out.priors.reserve(obs.size());

  FeatureHistory hist;
  hist.t = 0;
  hist.x_prev = Value::constant(x0);
  Value h = net.initial_hidden();

  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Eigen::VectorXd& y = obs[i];
    if (y.size() != n) throw ConfigError("observation dimension mismatch");

    Value x_prior = apply_f(model, hist.x_prev);
    Value y_pred = apply_h(model, x_prior);
    hist.y_pred = y_pred;
    hist.y_curr = y;

    Value raw = compute_features(hist).stacked();
    if (raw_features) raw_features->push_back(raw.value().col(0));
    Value feats = norm.apply(raw);
    SplitGainNetwork::Step st = net.step(feats, h);
    h = st.hidden;

    // Gain assembled from the predicted covariances; the observation
    // Jacobian enters as a locally constant matrix.
    const Eigen::MatrixXd h_jac = model.jac_h(x_prior.value().col(0));
    Value gain =
        st.prior_cov * Value::constant(h_jac.transpose()) * inverse(st.innov_cov);

    Value innovation = Value::constant(y) - y_pred;
    Value x_post = x_prior + gain * innovation;

    Value ikh = Value::constant(Eigen::MatrixXd::Identity(m, m)) -
                gain * Value::constant(h_jac);
    Value post_cov;
    if (form == CovUpdateForm::standard) {
      post_cov = ikh * st.prior_cov;
    } else {
      post_cov = gain * Value::constant(model.R) * transpose(gain) +
                 ikh * st.prior_cov * transpose(ikh);
    }

    out.states.push_back(x_post);
    out.covs.push_back(post_cov);
    out.gains.push_back(gain.value());
    out.priors.push_back(x_prior.value().col(0));

    hist.x_prev2 = hist.x_prev;
    hist.x_prev = x_post;
    hist.y_prev = y;
    hist.t = static_cast<int>(i) + 1;
  }
  return out;
}

LearnedRunOutput run_tracker(const Eigen::VectorXd& x0,
                             const std::vector<Eigen::VectorXd>& obs,
                             const RecurrentTracker& net,
                             const FeatureNormalizer& norm) {
  if (x0.size() != net.config().state_dim)
    throw ConfigError("x0 dimension mismatch");
  const int m = net.config().state_dim;

  LearnedRunOutput out;
  out.states.reserve(obs.size());
  out.covs.reserve(obs.size());

  Value h = net.initial_hidden(x0);
  for (const Eigen::VectorXd& y : obs) {
    if (y.size() != net.config().obs_dim)
      throw ConfigError("observation dimension mismatch");
    Value y_norm = norm.apply(Value::constant(y));
    RecurrentTracker::Step st = net.step(y_norm, h);
    h = st.hidden;

    out.states.push_back(st.state);
    // Diagonal covariance from the log variances.
    Value var = exp_v(st.log_var);
    Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(m * m, m);
    for (int j = 0; j < m; ++j) basis(j * m + j, j) = 1.0;
    Value cov = reshape(Value::constant(basis) * var, m, m);
    out.covs.push_back(cov);
  }
  return out;
}

std::vector<Eigen::MatrixXd> extract_cov_sequence(
    const SSModelSpec& filter_model, const std::vector<Eigen::VectorXd>& priors,
    const std::vector<Eigen::MatrixXd>& gains, CovUpdateForm form) {
  if (priors.size() != gains.size())
    throw ConfigError("extract_cov_sequence: length mismatch");
  std::vector<Eigen::MatrixXd> covs;
  covs.reserve(gains.size());
  for (std::size_t t = 0; t < gains.size(); ++t) {
    const Eigen::MatrixXd h_jac = filter_model.jac_h(priors[t]);
    const Eigen::MatrixXd prior_cov =
        recover_prior_from_gain(gains[t], h_jac, filter_model.R);
    covs.push_back(form == CovUpdateForm::standard
                       ? extract_cov_update(gains[t], h_jac, prior_cov)
                       : extract_cov_joseph(gains[t], h_jac, prior_cov,
                                            filter_model.R));
  }
  return covs;
}

}  // namespace kalmanuq
