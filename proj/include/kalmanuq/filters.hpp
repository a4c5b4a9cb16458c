#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kalmanuq/covariance.hpp"
#include "kalmanuq/ekf.hpp"
#include "kalmanuq/layers.hpp"
#include "kalmanuq/state_space.hpp"

namespace kalmanuq {

enum class FilterVariant { ekf, knet_kg, skn, blackbox, bkn };

FilterVariant filter_variant_from_string(const std::string& s);
std::string to_string(FilterVariant v);

// Input differences feeding the gain network at step t:
//   dx       = x̂_{t-1} - x̂_{t-2}
//   dy_innov = y_t - h(f(x̂_{t-1}))
//   dy_diff  = y_t - y_{t-1}
// At t = 1 all three are zero (no history).
struct KnetFeatures {
  Value dx;
  Value dy_innov;
  Value dy_diff;

  Value stacked() const;  // [dx; dy_innov; dy_diff]
};

// Rolling context maintained by the filter runners.
struct FeatureHistory {
  int t = 0;  // last completed step
  Value x_prev;   // x̂_{t-1}
  Value x_prev2;  // x̂_{t-2}
  Eigen::VectorXd y_prev;
  Value y_pred;   // h(f(x̂_{t-1})), set by the caller before compute
  Eigen::VectorXd y_curr;
};

KnetFeatures compute_features(const FeatureHistory& history);

// One mask realization for the two dropout sites of a gain network.
struct MaskSet {
  MaskDraw input;   // width = feature dimension
  MaskDraw hidden;  // width = GRU hidden dimension
};

struct GainNetConfig {
  int state_dim = 0;
  int obs_dim = 0;
  int hidden_dim = 0;            // 0 selects 10 (state_dim + obs_dim)
  double gain_out_scale = 1e-2;  // output layer weight scale at init
  double dropout_p_init = 0.0;
  double dropout_p_init_hidden = -1.0;  // < 0 reuses dropout_p_init
  std::uint64_t init_seed = 0;

  int feature_dim() const { return state_dim + 2 * obs_dim; }
  int resolved_hidden() const {
    return hidden_dim > 0 ? hidden_dim : 10 * (state_dim + obs_dim);
  }
};

// Recurrent network mapping normalized feature differences to a Kalman gain:
// dropout > dense(relu) > GRU > dropout > dense, reshaped to m x n. The
// output layer starts near zero so the untrained filter is close to
// open-loop.
class GainNetwork {
 public:
  explicit GainNetwork(const GainNetConfig& config);

  struct Step {
    Value gain;  // m x n
    Value hidden;
  };

  Step step(const Value& features, const Value& h_prev, DropoutMode mode,
            const MaskSet* masks) const;

  Value initial_hidden() const { return gru_->initial_state(); }

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const GainNetConfig& config() const { return config_; }
  const ConcreteDropoutLayer& dropout_input() const { return *drop_in_; }
  const ConcreteDropoutLayer& dropout_hidden() const { return *drop_out_; }
  // (weight norm, logit_p, input width) per dropout site, for the
  // regularizer.
  struct RegularizerSite {
    Value weight_norm_sq;
    Value logit_p;
    int n_inputs;
  };
  std::vector<RegularizerSite> regularizer_sites() const;

 private:
  GainNetConfig config_;
  ParameterSet params_;
  std::unique_ptr<ConcreteDropoutLayer> drop_in_, drop_out_;
  std::unique_ptr<DenseLayer> fc_in_, fc_out_;
  std::unique_ptr<GRUCell> gru_;
};

// Gain network with covariance heads: the GRU state additionally feeds two
// dense heads producing Cholesky factors of the prior covariance (m x m) and
// the innovation covariance (n x n); the gain is assembled as
// P_prior H^T S^{-1} instead of being predicted directly.
class SplitGainNetwork {
 public:
  explicit SplitGainNetwork(const GainNetConfig& config);

  struct Step {
    Value prior_cov;  // m x m, SPD
    Value innov_cov;  // n x n, SPD
    Value hidden;
  };

  Step step(const Value& features, const Value& h_prev) const;

  Value initial_hidden() const { return gru_->initial_state(); }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const GainNetConfig& config() const { return config_; }

 private:
  GainNetConfig config_;
  ParameterSet params_;
  std::unique_ptr<DenseLayer> fc_in_, head_prior_, head_innov_;
  std::unique_ptr<GRUCell> gru_;
};

// Model-free tracker: a GRU over normalized observations with dense heads
// for the state estimate and the log variance of each coordinate. The true
// initial state seeds the hidden state through a small dense layer; f and h
// are never used.
class RecurrentTracker {
 public:
  explicit RecurrentTracker(const GainNetConfig& config);

  struct Step {
    Value state;    // m x 1
    Value log_var;  // m x 1
    Value hidden;
  };

  Step step(const Value& y_norm, const Value& h_prev) const;
  Value initial_hidden(const Eigen::VectorXd& x0) const;

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const GainNetConfig& config() const { return config_; }

 private:
  GainNetConfig config_;
  ParameterSet params_;
  std::unique_ptr<DenseLayer> init_state_, head_state_, head_logvar_;
  std::unique_ptr<GRUCell> gru_;
};

// Output of a learned filter over one trajectory. States (and covariances,
// when produced) are graph values so the same runners serve training and
// inference.
struct LearnedRunOutput {
  std::vector<Value> states;
  std::vector<Value> covs;              // empty when none are produced
  std::vector<Eigen::MatrixXd> gains;   // numeric, empty for the tracker
  std::vector<Eigen::VectorXd> priors;  // numeric predicted states

  FilterResult to_result() const;
};

// Masks for one trajectory: one MaskSet per step when resampling, else a
// single shared MaskSet. An empty schedule only works with dropout off;
// stochastic modes then throw instead of silently disabling dropout.
struct MaskSchedule {
  std::vector<MaskSet> sets;
  bool per_step = false;

  const MaskSet* at(int t) const {
    if (sets.empty()) return nullptr;
    return per_step ? &sets[t] : &sets.front();
  }
};

// Learned-gain filter pass. Covariances are not produced here; use
// extraction afterwards (frequentist) or an ensemble (Bayesian).
// raw_features, when given, receives the stacked pre-normalization feature
// vector of every step (used to calibrate the normalizer on a dry run).
LearnedRunOutput run_gain_filter(const SSModelSpec& filter_model,
                                 const Eigen::VectorXd& x0,
                                 const std::vector<Eigen::VectorXd>& obs,
                                 const GainNetwork& net,
                                 const FeatureNormalizer& norm,
                                 DropoutMode mode, const MaskSchedule& masks,
                                 std::vector<Eigen::VectorXd>* raw_features =
                                     nullptr);

// Same pass with differentiable covariance extraction chained per step:
// prior from the gain (optimal-gain inversion), posterior in the requested
// form. Requires a full-column-rank observation Jacobian.
LearnedRunOutput run_gain_filter_with_cov(const SSModelSpec& filter_model,
                                          const Eigen::VectorXd& x0,
                                          const std::vector<Eigen::VectorXd>& obs,
                                          const GainNetwork& net,
                                          const FeatureNormalizer& norm,
                                          CovUpdateForm form);

// Split filter pass; covariances come from the network heads and the
// requested posterior form.
LearnedRunOutput run_split_filter(const SSModelSpec& filter_model,
                                  const Eigen::VectorXd& x0,
                                  const std::vector<Eigen::VectorXd>& obs,
                                  const SplitGainNetwork& net,
                                  const FeatureNormalizer& norm,
                                  CovUpdateForm form,
                                  std::vector<Eigen::VectorXd>* raw_features =
                                      nullptr);

// Tracker pass; covariances are the diagonal head outputs.
LearnedRunOutput run_tracker(const Eigen::VectorXd& x0,
                             const std::vector<Eigen::VectorXd>& obs,
                             const RecurrentTracker& net,
                             const FeatureNormalizer& norm);

// Numeric covariance extraction for an already computed gain sequence, one
// entry per step. jac_h is evaluated on the prior state sequence. Throws
// UnrecoverableCovariance when the Jacobian is rank deficient.
std::vector<Eigen::MatrixXd> extract_cov_sequence(
    const SSModelSpec& filter_model, const std::vector<Eigen::VectorXd>& priors,
    const std::vector<Eigen::MatrixXd>& gains, CovUpdateForm form);

}  // namespace kalmanuq
