#include "kalmanuq/autodiff.hpp"

#include <cmath>

#include "kalmanuq/errors.hpp"

namespace kalmanuq {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::shared_ptr<AdNode> make_node(Eigen::MatrixXd v, bool requires_grad) {
  auto node = std::make_shared<AdNode>();
  node->value = std::move(v);
  node->requires_grad = requires_grad;
  return node;
}

bool should_record(std::initializer_list<const Value*> parents) {
  if (g_active_tape == nullptr) return false;
  for (const Value* p : parents)
    if (p->requires_grad()) return true;
  return false;
}

// True when the node received a gradient during backward; dead branches do
// not propagate.
bool has_grad(const std::shared_ptr<AdNode>& n) { return n->grad.size() > 0; }

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void AdNode::accumulate(const Eigen::MatrixXd& g) {
  if (grad.size() == 0) grad = Eigen::MatrixXd::Zero(value.rows(), value.cols());
  grad += g;
}

Value Value::constant(Eigen::MatrixXd v) {
  return Value(make_node(std::move(v), false));
}

Value Value::constant_scalar(double v) {
  Eigen::MatrixXd m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Value Value::parameter(Eigen::MatrixXd v) {
  return Value(make_node(std::move(v), true));
}

Eigen::MatrixXd Value::grad() const {
  if (!node_ || node_->grad.size() == 0)
    return Eigen::MatrixXd::Zero(node_ ? node_->value.rows() : 0,
                                 node_ ? node_->value.cols() : 0);
  return node_->grad;
}

double Value::scalar() const {
  if (node_->value.rows() != 1 || node_->value.cols() != 1)
    throw ConfigError("scalar() on a non 1x1 value");
  return node_->value(0, 0);
}

void Tape::backward(const Value& loss) {
  if (!loss.defined() || loss.value().rows() != 1 || loss.value().cols() != 1)
    throw ConfigError("backward requires a scalar loss");
  loss.node()->accumulate(Eigen::MatrixXd::Ones(1, 1));
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

void Tape::clear() { ops_.clear(); }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

Value detach(const Value& v) { return Value::constant(v.value()); }

Value operator+(const Value& a, const Value& b) {
  if (a.value().rows() != b.value().rows() ||
      a.value().cols() != b.value().cols())
    throw ConfigError("operator+: shape mismatch");
  const bool rec = should_record({&a, &b});
  Value out(make_node(a.value() + b.value(), rec));
  if (rec) {
    auto an = a.node(), bn = b.node(), rn = out.node();
    g_active_tape->push([an, bn, rn]() {
      if (!has_grad(rn)) return;
      if (an->requires_grad) an->accumulate(rn->grad);
      if (bn->requires_grad) bn->accumulate(rn->grad);
    });
  }
  return out;
}

Value operator-(const Value& a, const Value& b) {
  if (a.value().rows() != b.value().rows() ||
      a.value().cols() != b.value().cols())
    throw ConfigError("operator-: shape mismatch");
  const bool rec = should_record({&a, &b});
  Value out(make_node(a.value() - b.value(), rec));
  if (rec) {
    auto an = a.node(), bn = b.node(), rn = out.node();
    g_active_tape->push([an, bn, rn]() {
      if (!has_grad(rn)) return;
      if (an->requires_grad) an->accumulate(rn->grad);
      if (bn->requires_grad) bn->accumulate(-rn->grad);
    });
  }
  return out;
}

Value operator*(const Value& a, const Value& b) {
  if (a.value().cols() != b.value().rows())
    throw ConfigError("operator*: inner dimension mismatch");
  const bool rec = should_record({&a, &b});
  Value out(make_node(a.value() * b.value(), rec));
  if (rec) {
    auto an = a.node(), bn = b.node(), rn = out.node();
    g_active_tape->push([an, bn, rn]() {
      if (!has_grad(rn)) return;
      if (an->requires_grad) an->accumulate(rn->grad * bn->value.transpose());
      if (bn->requires_grad) bn->accumulate(an->value.transpose() * rn->grad);
    });
  }
  return out;
}

Value operator*(double s, const Value& a) {
  const bool rec = should_record({&a});
  Value out(make_node(s * a.value(), rec));
  if (rec) {
    auto an = a.node(), rn = out.node();
    g_active_tape->push([s, an, rn]() {
      if (!has_grad(rn)) return;
      an->accumulate(s * rn->grad);
    });
  }
  return out;
}

Value cmul(const Value& a, const Value& b) {
  if (a.value().rows() != b.value().rows() ||
      a.value().cols() != b.value().cols())
    throw ConfigError("cmul: shape mismatch");
  const bool rec = should_record({&a, &b});
  Value out(make_node(a.value().cwiseProduct(b.value()), rec));
  if (rec) {
    auto an = a.node(), bn = b.node(), rn = out.node();
    g_active_tape->push([an, bn, rn]() {
      if (!has_grad(rn)) return;
      if (an->requires_grad) an->accumulate(rn->grad.cwiseProduct(bn->value));
      if (bn->requires_grad) bn->accumulate(rn->grad.cwiseProduct(an->value));
    });
  }
  return out;
}

Value transpose(const Value& a) {
  const bool rec = should_record({&a});
  Value out(make_node(a.value().transpose(), rec));
  if (rec) {
    auto an = a.node(), rn = out.node();
    g_active_tape->push([an, rn]() {
      if (!has_grad(rn)) return;
      an->accumulate(rn->grad.transpose());
    });
  }
  return out;
}

Value diag_of(const Value& a) {
  if (a.value().rows() != a.value().cols())
    throw ConfigError("diag_of: matrix must be square");
  const bool rec = should_record({&a});
  Value out(make_node(a.value().diagonal(), rec));
  if (rec) {
    auto an = a.node(), rn = out.node();
    g_active_tape->push([an, rn]() {
      if (!has_grad(rn)) return;
      Eigen::MatrixXd g = Eigen::MatrixXd::Zero(an->value.rows(), an->value.cols());
      g.diagonal() = rn->grad.col(0);
      an->accumulate(g);
    });
  }
  return out;
}

Value reshape(const Value& a, Eigen::Index rows, Eigen::Index cols) {
  if (a.value().size() != rows * cols)
    throw ConfigError("reshape: element count mismatch");
  // Row-major interpretation: entry (i, j) of the result is element
  // i*cols + j of the flattened input (read row by row).
  Eigen::MatrixXd v(rows, cols);
  const Eigen::MatrixXd& src = a.value();
  {
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < src.rows(); ++i)
      for (Eigen::Index j = 0; j < src.cols(); ++j, ++k)
        v(k / cols, k % cols) = src(i, j);
  }
  const bool rec = should_record({&a});
  Value out(make_node(std::move(v), rec));
  if (rec) {
    auto an = a.node(), rn = out.node();
    g_active_tape->push([an, rn, cols]() {
      if (!has_grad(rn)) return;
      Eigen::MatrixXd g(an->value.rows(), an->value.cols());
      Eigen::Index k = 0;
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        for (Eigen::Index j = 0; j < g.cols(); ++j, ++k)
          g(i, j) = rn->grad(k / cols, k % cols);
      an->accumulate(g);
    });
  }
  return out;
}

Value vcat(const std::vector<Value>& parts) {
  if (parts.empty()) throw ConfigError("vcat: empty input");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().value().cols();
  for (const Value& p : parts) {
    if (p.value().cols() != cols) throw ConfigError("vcat: column mismatch");
    rows += p.value().rows();
  }
  Eigen::MatrixXd v(rows, cols);
  Eigen::Index at = 0;
  for (const Value& p : parts) {
    v.middleRows(at, p.value().rows()) = p.value();
    at += p.value().rows();
  }
  bool any = false;
  for (const Value& p : parts) any = any || p.requires_grad();
  const bool rec = g_active_tape != nullptr && any;
  Value out(make_node(std::move(v), rec));
  if (rec) {
    std::vector<std::shared_ptr<AdNode>> pn;
    pn.reserve(parts.size());
    for (const Value& p : parts) pn.push_back(p.node());
    auto rn = out.node();
    g_active_tape->push([pn, rn]() {
      if (!has_grad(rn)) return;
      Eigen::Index at = 0;
      for (const auto& n : pn) {
        if (n->requires_grad)
          n->accumulate(rn->grad.middleRows(at, n->value.rows()));
        at += n->value.rows();
      }
    });
  }
  return out;
}

Value slice_rows(const Value& a, Eigen::Index start, Eigen::Index n) {
  if (start < 0 || n < 0 || start + n > a.value().rows())
    throw ConfigError("slice_rows: out of range");
  const bool rec = should_record({&a});
  Value out(make_node(a.value().middleRows(start, n), rec));
  if (rec) {
    auto an = a.node(), rn = out.node();
    g_active_tape->push([an, rn, start, n]() {
      if (!has_grad(rn)) return;
      Eigen::MatrixXd g =
          Eigen::MatrixXd::Zero(an->value.rows(), an->value.cols());
      g.middleRows(start, n) = rn->grad;
      an->accumulate(g);
    });
  }
  return out;
}

namespace {

template <typename Fwd, typename DerivFromInOut>
Value unary_cwise(const Value& a, Fwd fwd, DerivFromInOut deriv) {
  const bool rec = should_record({&a});
  Value out(make_node(a.value().unaryExpr(fwd), rec));
  if (rec) {
    auto an = a.node(), rn = out.node();
    g_active_tape->push([an, rn, deriv]() {
      if (!has_grad(rn)) return;
      Eigen::MatrixXd d(an->value.rows(), an->value.cols());
      for (Eigen::Index j = 0; j < d.cols(); ++j)
        for (Eigen::Index i = 0; i < d.rows(); ++i)
          d(i, j) = deriv(an->value(i, j), rn->value(i, j));
      an->accumulate(rn->grad.cwiseProduct(d));
    });
  }
  return out;
}

}  // namespace

Value tanh_v(const Value& a) {
  return unary_cwise(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Value sigmoid_v(const Value& a) {
  return unary_cwise(
      a, [](double x) { return stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Value relu_v(const Value& a) {
  return unary_cwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Value softplus_v(const Value& a) {
  return unary_cwise(
      a,
      [](double x) {
        // log(1 + e^x), overflow safe.
        return x > 30.0 ? x : std::log1p(std::exp(x));
      },
      [](double x, double) { return stable_sigmoid(x); });
}

Value exp_v(const Value& a) {
  return unary_cwise(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Value abs_v(const Value& a) {
  return unary_cwise(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Value square_v(const Value& a) {
  return unary_cwise(
      a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Value sum(const Value& a) {
  const bool rec = should_record({&a});
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = a.value().sum();
  Value out(make_node(std::move(v), rec));
  if (rec) {
    auto an = a.node(), rn = out.node();
    g_active_tape->push([an, rn]() {
      if (!has_grad(rn)) return;
      an->accumulate(Eigen::MatrixXd::Constant(
          an->value.rows(), an->value.cols(), rn->grad(0, 0)));
    });
  }
  return out;
}

Value sum_squares(const Value& a) {
  const bool rec = should_record({&a});
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = a.value().squaredNorm();
  Value out(make_node(std::move(v), rec));
  if (rec) {
    auto an = a.node(), rn = out.node();
    g_active_tape->push([an, rn]() {
      if (!has_grad(rn)) return;
      an->accumulate(2.0 * rn->grad(0, 0) * an->value);
    });
  }
  return out;
}

Value inverse(const Value& a) {
  if (a.value().rows() != a.value().cols())
    throw ConfigError("inverse: matrix must be square");
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(a.value());
  Eigen::MatrixXd y = lu.inverse();
  if (!y.allFinite()) throw NumericalError("inverse: singular matrix");
  const bool rec = should_record({&a});
  Value out(make_node(std::move(y), rec));
  if (rec) {
    auto an = a.node(), rn = out.node();
    g_active_tape->push([an, rn]() {
      if (!has_grad(rn)) return;
      an->accumulate(-rn->value.transpose() * rn->grad *
                     rn->value.transpose());
    });
  }
  return out;
}

Value gauss_energy(const Value& e, const Value& sigma) {
  const Eigen::Index n = e.value().rows();
  if (e.value().cols() != 1 || sigma.value().rows() != n ||
      sigma.value().cols() != n)
    throw ConfigError("gauss_energy: dimension mismatch");

  Eigen::MatrixXd s = sigma.value();
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success) {
    const double jitter = 1e-9 * s.trace() / static_cast<double>(n);
    s += jitter * Eigen::MatrixXd::Identity(n, n);
    llt.compute(s);
    if (llt.info() != Eigen::Success)
      throw NumericalError("gauss_energy: covariance is not positive definite");
  }

  const Eigen::VectorXd alpha = llt.solve(e.value());
  double logdet = 0.0;
  const Eigen::MatrixXd l = llt.matrixL();
  for (Eigen::Index i = 0; i < n; ++i) logdet += 2.0 * std::log(l(i, i));

  Eigen::MatrixXd v(1, 1);
  v(0, 0) = e.value().col(0).dot(alpha) + logdet;

  const bool rec = should_record({&e, &sigma});
  Value out(make_node(std::move(v), rec));
  if (rec) {
    const Eigen::MatrixXd sigma_inv =
        llt.solve(Eigen::MatrixXd::Identity(n, n));
    auto en = e.node(), sn = sigma.node(), rn = out.node();
    g_active_tape->push([en, sn, rn, alpha, sigma_inv]() {
      if (!has_grad(rn)) return;
      const double g = rn->grad(0, 0);
      if (en->requires_grad) en->accumulate(g * 2.0 * alpha);
      if (sn->requires_grad)
        sn->accumulate(g * (sigma_inv - alpha * alpha.transpose()));
    });
  }
  return out;
}

Value lower_triangular(const Value& packed, Eigen::Index dim,
                       double diag_floor) {
  const Eigen::Index expect = dim * (dim + 1) / 2;
  if (packed.value().cols() != 1 || packed.value().rows() != expect)
    throw ConfigError("lower_triangular: packed entry count mismatch");

  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < dim; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j, ++k) {
      const double x = packed.value()(k, 0);
      if (i == j) {
        const double sp = x > 30.0 ? x : std::log1p(std::exp(x));
        l(i, j) = std::max(sp, diag_floor);
      } else {
        l(i, j) = x;
      }
    }
  }
  const bool rec = should_record({&packed});
  Value out(make_node(std::move(l), rec));
  if (rec) {
    auto pn = packed.node(), rn = out.node();
    g_active_tape->push([pn, rn, dim, diag_floor]() {
      if (!has_grad(rn)) return;
      Eigen::MatrixXd g = Eigen::MatrixXd::Zero(pn->value.rows(), 1);
      Eigen::Index k = 0;
      for (Eigen::Index i = 0; i < dim; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j, ++k) {
          if (i == j) {
            const double x = pn->value(k, 0);
            const double sp = x > 30.0 ? x : std::log1p(std::exp(x));
            // Clamped diagonal entries stop the gradient.
            g(k, 0) = sp >= diag_floor ? rn->grad(i, j) * stable_sigmoid(x)
                                       : 0.0;
          } else {
            g(k, 0) = rn->grad(i, j);
          }
        }
      }
      pn->accumulate(g);
    });
  }
  return out;
}

Value apply_f(const SSModelSpec& model, const Value& x) {
  if (x.value().cols() != 1 || x.value().rows() != model.state_dim)
    throw ConfigError("apply_f: state dimension mismatch");
  const Eigen::VectorXd xv = x.value().col(0);
  const bool rec = should_record({&x});
  Value out(make_node(model.f(xv), rec));
  if (rec) {
    const Eigen::MatrixXd jt = model.jac_f(xv).transpose();
    auto xn = x.node(), rn = out.node();
    g_active_tape->push([xn, rn, jt]() {
      if (!has_grad(rn)) return;
      xn->accumulate(jt * rn->grad);
    });
  }
  return out;
}

Value apply_h(const SSModelSpec& model, const Value& x) {
  if (x.value().cols() != 1 || x.value().rows() != model.state_dim)
    throw ConfigError("apply_h: state dimension mismatch");
  const Eigen::VectorXd xv = x.value().col(0);
  const bool rec = should_record({&x});
  Value out(make_node(model.h(xv), rec));
  if (rec) {
    const Eigen::MatrixXd jt = model.jac_h(xv).transpose();
    auto xn = x.node(), rn = out.node();
    g_active_tape->push([xn, rn, jt]() {
      if (!has_grad(rn)) return;
      xn->accumulate(jt * rn->grad);
    });
  }
  return out;
}

Value concrete_mask(const Value& logit_p, const Eigen::VectorXd& u,
                    double tau) {
  if (logit_p.value().rows() != 1 || logit_p.value().cols() != 1)
    throw ConfigError("concrete_mask: logit_p must be scalar");
  if (tau <= 0.0) throw ConfigError("concrete_mask: tau must be positive");

  const double l = logit_p.value()(0, 0);
  const double inv_keep = 1.0 + std::exp(l);  // 1/(1-p), p = sigmoid(l)
  const Eigen::Index k = u.size();

  Eigen::MatrixXd factors(k, 1);
  Eigen::VectorXd dfactors(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    // log p - log(1-p) = l exactly for p = sigmoid(l).
    const double a = (l + std::log(u(i)) - std::log1p(-u(i))) / tau;
    const double sa = stable_sigmoid(a);
    const double z = 1.0 - sa;  // relaxed keep indicator
    factors(i, 0) = z * inv_keep;
    dfactors(i) = -(sa * (1.0 - sa) / tau) * inv_keep + z * std::exp(l);
  }

  const bool rec = should_record({&logit_p});
  Value out(make_node(std::move(factors), rec));
  if (rec) {
    auto ln = logit_p.node(), rn = out.node();
    g_active_tape->push([ln, rn, dfactors]() {
      if (!has_grad(rn)) return;
      Eigen::MatrixXd g(1, 1);
      g(0, 0) = rn->grad.col(0).dot(dfactors);
      ln->accumulate(g);
    });
  }
  return out;
}

Value bernoulli_entropy(const Value& logit_p) {
  if (logit_p.value().rows() != 1 || logit_p.value().cols() != 1)
    throw ConfigError("bernoulli_entropy: logit_p must be scalar");
  const double l = logit_p.value()(0, 0);
  double p = stable_sigmoid(l);
  p = std::min(std::max(p, 1e-6), 1.0 - 1e-6);

  Eigen::MatrixXd v(1, 1);
  v(0, 0) = -p * std::log(p) - (1.0 - p) * std::log(1.0 - p);

  const bool rec = should_record({&logit_p});
  Value out(make_node(std::move(v), rec));
  if (rec) {
    // dH/dl = p(1-p) (log(1-p) - log p) = -l p(1-p) for unclamped p.
    const double d = p * (1.0 - p) * (std::log(1.0 - p) - std::log(p));
    auto ln = logit_p.node(), rn = out.node();
    g_active_tape->push([ln, rn, d]() {
      if (!has_grad(rn)) return;
      Eigen::MatrixXd g(1, 1);
      g(0, 0) = rn->grad(0, 0) * d;
      ln->accumulate(g);
    });
  }
  return out;
}

Value inv_keep_prob(const Value& logit_p) {
  if (logit_p.value().rows() != 1 || logit_p.value().cols() != 1)
    throw ConfigError("inv_keep_prob: logit_p must be scalar");
  const double l = logit_p.value()(0, 0);
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = 1.0 + std::exp(l);

  const bool rec = should_record({&logit_p});
  Value out(make_node(std::move(v), rec));
  if (rec) {
    const double d = std::exp(l);
    auto ln = logit_p.node(), rn = out.node();
    g_active_tape->push([ln, rn, d]() {
      if (!has_grad(rn)) return;
      Eigen::MatrixXd g(1, 1);
      g(0, 0) = rn->grad(0, 0) * d;
      ln->accumulate(g);
    });
  }
  return out;
}

}  // namespace kalmanuq
