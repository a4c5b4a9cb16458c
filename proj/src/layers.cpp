#include "kalmanuq/layers.hpp"

#include <cmath>

#include "kalmanuq/errors.hpp"

namespace kalmanuq {

Value ParameterSet::add(const std::string& path, Eigen::MatrixXd init) {
  for (const Entry& e : entries_)
    if (e.path == path) throw ConfigError("duplicate parameter path: " + path);
  Value v = Value::parameter(std::move(init));
  entries_.push_back(Entry{path, v});
  return v;
}

Value* ParameterSet::find(const std::string& path) {
  for (Entry& e : entries_)
    if (e.path == path) return &e.var;
  return nullptr;
}

void ParameterSet::zero_grad() {
  for (Entry& e : entries_) e.var.node()->grad.resize(0, 0);
}

double ParameterSet::grad_norm() const {
  double sq = 0.0;
  for (const Entry& e : entries_) {
    const Eigen::MatrixXd& g = e.var.node()->grad;
    if (g.size() > 0) sq += g.squaredNorm();
  }
  return std::sqrt(sq);
}

void ParameterSet::clip_grad(double max_norm) {
  const double norm = grad_norm();
  if (norm <= max_norm || norm == 0.0) return;
  const double scale = max_norm / norm;
  for (Entry& e : entries_) {
    Eigen::MatrixXd& g = e.var.node()->grad;
    if (g.size() > 0) g *= scale;
  }
}

std::vector<Eigen::MatrixXd> ParameterSet::snapshot() const {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(entries_.size());
  for (const Entry& e : entries_) out.push_back(e.var.value());
  return out;
}

void ParameterSet::restore(const std::vector<Eigen::MatrixXd>& values) {
  if (values.size() != entries_.size())
    throw ConfigError("parameter snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i)
    entries_[i].var.node()->value = values[i];
}

Eigen::MatrixXd xavier_uniform(int out_dim, int in_dim, RandomStream& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  Eigen::MatrixXd w(out_dim, in_dim);
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      w(i, j) = rng.uniform_in(-a, a);
  return w;
}

DenseLayer::DenseLayer(ParameterSet& params, const std::string& path,
                       int in_dim, int out_dim, Activation act,
                       RandomStream& init_rng, double weight_scale)
    : in_dim_(in_dim), out_dim_(out_dim), act_(act) {
  w_ = params.add(path + ".weight",
                  weight_scale * xavier_uniform(out_dim, in_dim, init_rng));
  b_ = params.add(path + ".bias", Eigen::MatrixXd::Zero(out_dim, 1));
}

Value DenseLayer::forward(const Value& x) const {
  Value y = w_ * x + b_;
  switch (act_) {
    case Activation::none:
      return y;
    case Activation::relu:
      return relu_v(y);
    case Activation::tanh:
      return tanh_v(y);
  }
  throw ConfigError("unknown activation");
}

Value DenseLayer::weight_norm_sq() const { return sum_squares(w_); }

GRUCell::GRUCell(ParameterSet& params, const std::string& path, int in_dim,
                 int hidden_dim, RandomStream& init_rng)
    : in_dim_(in_dim), hidden_dim_(hidden_dim) {
  auto w = [&](const char* name, int rows, int cols) {
    return params.add(path + "." + name,
                      xavier_uniform(rows, cols, init_rng));
  };
  auto b = [&](const char* name) {
    return params.add(path + "." + name,
                      Eigen::MatrixXd::Zero(hidden_dim, 1));
  };
  wz_ = w("weight_xz", hidden_dim, in_dim);
  uz_ = w("weight_hz", hidden_dim, hidden_dim);
  bz_ = b("bias_z");
  wr_ = w("weight_xr", hidden_dim, in_dim);
  ur_ = w("weight_hr", hidden_dim, hidden_dim);
  br_ = b("bias_r");
  wn_ = w("weight_xn", hidden_dim, in_dim);
  un_ = w("weight_hn", hidden_dim, hidden_dim);
  bn_ = b("bias_n");
}

Value GRUCell::forward(const Value& x, const Value& h_prev) const {
  Value z = sigmoid_v(wz_ * x + uz_ * h_prev + bz_);
  Value r = sigmoid_v(wr_ * x + ur_ * h_prev + br_);
  Value c = tanh_v(wn_ * x + cmul(r, un_ * h_prev) + bn_);
  Value one = Value::constant(Eigen::MatrixXd::Ones(hidden_dim_, 1));
  return cmul(one - z, c) + cmul(z, h_prev);
}

Value GRUCell::initial_state() const {
  return Value::constant(Eigen::MatrixXd::Zero(hidden_dim_, 1));
}

MaskDraw draw_mask(int width, RandomStream& rng) {
  MaskDraw d;
  d.u.resize(width);
  for (int i = 0; i < width; ++i) d.u(i) = rng.uniform();
  return d;
}

ConcreteDropoutLayer::ConcreteDropoutLayer(ParameterSet& params,
                                           const std::string& path, int width,
                                           double p_init)
    : width_(width) {
  if (p_init < 0.0 || p_init >= 1.0)
    throw ConfigError("dropout p_init must be in [0, 1)");
  // logit of p. p_init = 0 maps to a -inf logit, which both mask paths
  // treat as an exact identity: drop probability 0, rescale exactly 1.
  Eigen::MatrixXd l(1, 1);
  l(0, 0) = std::log(p_init) - std::log1p(-p_init);
  logit_p_ = params.add(path + ".logit_p", std::move(l));
}

double ConcreteDropoutLayer::p() const {
  const double l = logit_p_.value()(0, 0);
  if (l >= 0.0) return 1.0 / (1.0 + std::exp(-l));
  const double e = std::exp(l);
  return e / (1.0 + e);
}

Value ConcreteDropoutLayer::apply(const Value& x, DropoutMode mode,
                                  const MaskDraw* draw) const {
  if (x.value().rows() != width_ || x.value().cols() != 1)
    throw ConfigError("dropout input width mismatch");
  if (mode == DropoutMode::off) return x;
  if (draw == nullptr || draw->u.size() != width_)
    throw ConfigError("dropout mask draw missing or of wrong width");

  if (mode == DropoutMode::train_relaxed)
    return cmul(x, concrete_mask(logit_p_, draw->u, tau_));

  // Hard Bernoulli masks: keep unit i iff u_i >= p, rescale kept units.
  const double keep_p = p();
  Eigen::MatrixXd mask(width_, 1);
  for (int i = 0; i < width_; ++i)
    mask(i, 0) = draw->u(i) >= keep_p ? 1.0 / (1.0 - keep_p) : 0.0;
  return cmul(x, Value::constant(std::move(mask)));
}

FeatureNormalizer FeatureNormalizer::fit(
    const std::vector<Eigen::VectorXd>& samples) {
  if (samples.empty()) throw ConfigError("cannot fit normalizer: no samples");
  const Eigen::Index dim = samples.front().size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  for (const auto& s : samples) {
    if (s.size() != dim) throw ConfigError("normalizer sample size mismatch");
    mean += s;
  }
  mean /= static_cast<double>(samples.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
  for (const auto& s : samples) var += (s - mean).cwiseAbs2();
  var /= static_cast<double>(samples.size());

  Eigen::VectorXd inv_std(dim);
  for (Eigen::Index i = 0; i < dim; ++i)
    inv_std(i) = 1.0 / std::max(std::sqrt(var(i)), 1e-9);
  return FeatureNormalizer(inv_std);
}

Value FeatureNormalizer::apply(const Value& x) const {
  if (!fitted()) return x;
  if (x.value().rows() != inv_std_.size() || x.value().cols() != 1)
    throw ConfigError("normalizer dimension mismatch");
  return cmul(x, Value::constant(inv_std_));
}

}  // namespace kalmanuq
