#include "kalmanuq/optimizer.hpp"

#include <cmath>

#include "kalmanuq/errors.hpp"

namespace kalmanuq {

void AdamOptimizer::step(ParameterSet& params) {
  const auto& entries = params.entries();
  if (m_.empty()) {
    m_.resize(entries.size());
    v_.resize(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& val = entries[i].var.value();
      m_[i] = Eigen::MatrixXd::Zero(val.rows(), val.cols());
      v_[i] = Eigen::MatrixXd::Zero(val.rows(), val.cols());
    }
  }
  if (m_.size() != entries.size())
    throw ConfigError("parameter set changed between optimizer steps");

  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, t_);
  const double bc2 = 1.0 - std::pow(config_.beta2, t_);

  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Eigen::MatrixXd& g = entries[i].var.node()->grad;
    if (g.size() == 0) continue;
    if (!g.allFinite())
      throw TrainError("non-finite gradient for parameter " +
                       entries[i].path);

    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseAbs2();

    const Eigen::MatrixXd m_hat = m_[i] / bc1;
    const Eigen::MatrixXd v_hat = v_[i] / bc2;
    entries[i].var.node()->value -=
        config_.lr *
        (m_hat.array() / (v_hat.array().sqrt() + config_.eps)).matrix();
  }
}

}  // namespace kalmanuq
