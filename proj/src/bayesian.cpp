#include "kalmanuq/bayesian.hpp"

#include <thread>

#include "kalmanuq/errors.hpp"

namespace kalmanuq {

std::vector<MaskSchedule> sample_mask_schedules(const GainNetwork& net,
                                                int members, int steps,
                                                bool per_step,
                                                RandomStream& rng) {
  if (members <= 0) throw ConfigError("ensemble needs at least one member");
  if (steps <= 0) throw ConfigError("mask schedule needs at least one step");
  const int in_width = net.dropout_input().width();
  const int hid_width = net.dropout_hidden().width();

  std::vector<MaskSchedule> schedules(members);
  for (MaskSchedule& sched : schedules) {
    sched.per_step = per_step;
    const int draws = per_step ? steps : 1;
    sched.sets.reserve(draws);
    for (int t = 0; t < draws; ++t) {
      MaskSet set;
      set.input = draw_mask(in_width, rng);
      set.hidden = draw_mask(hid_width, rng);
      sched.sets.push_back(std::move(set));
    }
  }
  return schedules;
}

namespace {

// Compensated (Kahan) accumulator over equally shaped matrices.
class CompensatedSum {
 public:
  explicit CompensatedSum(Eigen::Index rows, Eigen::Index cols)
      : sum_(Eigen::MatrixXd::Zero(rows, cols)),
        comp_(Eigen::MatrixXd::Zero(rows, cols)) {}

  void add(const Eigen::MatrixXd& term) {
    for (Eigen::Index j = 0; j < term.cols(); ++j)
      for (Eigen::Index i = 0; i < term.rows(); ++i) {
        const double y = term(i, j) - comp_(i, j);
        const double t = sum_(i, j) + y;
        comp_(i, j) = (t - sum_(i, j)) - y;
        sum_(i, j) = t;
      }
  }

  const Eigen::MatrixXd& total() const { return sum_; }

 private:
  Eigen::MatrixXd sum_, comp_;
};

}  // namespace

Eigen::VectorXd ensemble_mean(const std::vector<Eigen::VectorXd>& xs) {
  if (xs.empty()) throw ConfigError("ensemble mean of an empty set");
  // Anchored at the first member: the compensated sum runs over deviations,
  // so identical members (dropout degenerated to the identity) average to
  // the member itself bit-for-bit.
  const Eigen::VectorXd& anchor = xs.front();
  CompensatedSum acc(anchor.size(), 1);
  for (const Eigen::VectorXd& x : xs) {
    if (x.size() != anchor.size())
      throw ConfigError("ensemble members disagree in dimension");
    acc.add(x - anchor);
  }
  return anchor + acc.total() / static_cast<double>(xs.size());
}

Eigen::MatrixXd ensemble_cov(const std::vector<Eigen::VectorXd>& xs,
                             const Eigen::VectorXd& mean) {
  if (xs.empty()) throw ConfigError("ensemble covariance of an empty set");
  const Eigen::Index m = mean.size();
  CompensatedSum acc(m, m);
  for (const Eigen::VectorXd& x : xs) {
    if (x.size() != m)
      throw ConfigError("ensemble members disagree in dimension");
    const Eigen::VectorXd d = x - mean;
    acc.add(d * d.transpose());
  }
  return acc.total() / static_cast<double>(xs.size());
}

Value graph_ensemble_mean(const std::vector<Value>& xs) {
  if (xs.empty()) throw ConfigError("ensemble mean of an empty set");
  Value acc = xs.front();
  for (std::size_t j = 1; j < xs.size(); ++j) acc = acc + xs[j];
  return (1.0 / static_cast<double>(xs.size())) * acc;
}

Value graph_ensemble_var_diag(const std::vector<Value>& xs,
                              const Value& mean) {
  if (xs.empty()) throw ConfigError("ensemble variance of an empty set");
  Value acc;
  for (const Value& x : xs) {
    Value d = x - mean;
    Value sq = cmul(d, d);
    acc = acc.defined() ? acc + sq : sq;
  }
  return (1.0 / static_cast<double>(xs.size())) * acc;
}

EnsembleRunResult run_dropout_ensemble(const SSModelSpec& filter_model,
                                       const Eigen::VectorXd& x0,
                                       const std::vector<Eigen::VectorXd>& obs,
                                       const GainNetwork& net,
                                       const FeatureNormalizer& norm,
                                       const EnsembleConfig& cfg,
                                       RandomStream& rng) {
  if (obs.empty()) throw ConfigError("ensemble run needs observations");
  const int steps = static_cast<int>(obs.size());
  const std::vector<MaskSchedule> schedules = sample_mask_schedules(
      net, cfg.members, steps, cfg.per_step_masks, rng);

  EnsembleRunResult out;
  out.member_states.resize(cfg.members);

  auto run_member = [&](int j) {
    LearnedRunOutput run =
        run_gain_filter(filter_model, x0, obs, net, norm,
                        DropoutMode::infer_bernoulli, schedules[j]);
    std::vector<Eigen::VectorXd> states;
    states.reserve(run.states.size());
    for (const Value& s : run.states) states.push_back(s.value().col(0));
    out.member_states[j] = std::move(states);
  };

  const int workers = std::max(1, std::min(cfg.threads, cfg.members));
  if (workers == 1) {
    for (int j = 0; j < cfg.members; ++j) run_member(j);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (int j = w; j < cfg.members; j += workers) run_member(j);
      });
    for (std::thread& t : pool) t.join();
  }

  out.combined.states.reserve(steps);
  out.combined.covs.reserve(steps);
  std::vector<Eigen::VectorXd> column(cfg.members);
  for (int t = 0; t < steps; ++t) {
    for (int j = 0; j < cfg.members; ++j)
      column[j] = out.member_states[j][t];
    Eigen::VectorXd mean = ensemble_mean(column);
    out.combined.covs.push_back(ensemble_cov(column, mean));
    out.combined.states.push_back(std::move(mean));
  }
  return out;
}

}  // namespace kalmanuq
