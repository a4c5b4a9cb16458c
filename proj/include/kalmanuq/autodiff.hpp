#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <vector>

#include "kalmanuq/state_space.hpp"

namespace kalmanuq {

// Minimal reverse-mode automatic differentiation over dense matrices.
// Values are Eigen matrices (column vectors for activations, 1x1 for
// scalars). Operations executed inside a TapeScope are recorded and can be
// differentiated by Tape::backward; outside any scope the same code runs as
// plain inference with no recording.

struct AdNode {
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;  // empty until the node receives a gradient
  bool requires_grad = false;

  // Adds g into grad, allocating zeros on first touch.
  void accumulate(const Eigen::MatrixXd& g);
};

// Handle to a node in the computation graph. Cheap to copy.
class Value {
 public:
  Value() = default;
  explicit Value(std::shared_ptr<AdNode> node) : node_(std::move(node)) {}

  // Leaf holding a constant; never receives gradients.
  static Value constant(Eigen::MatrixXd v);
  static Value constant_scalar(double v);

  // Leaf holding a trainable parameter.
  static Value parameter(Eigen::MatrixXd v);

  bool defined() const { return node_ != nullptr; }
  const Eigen::MatrixXd& value() const { return node_->value; }
  Eigen::MatrixXd& mutable_value() { return node_->value; }
  // Gradient accumulated by the last backward pass; zeros if untouched.
  Eigen::MatrixXd grad() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  double scalar() const;

  const std::shared_ptr<AdNode>& node() const { return node_; }

 private:
  std::shared_ptr<AdNode> node_;
};

// Records backward closures in execution order.
class Tape {
 public:
  // Runs reverse accumulation from a scalar (1x1) loss. Throws ConfigError
  // for non-scalar input. Gradients accumulate into every recorded node that
  // requires them; call clear() before reusing the tape for a new graph.
  void backward(const Value& loss);

  void clear();
  std::size_t size() const { return ops_.size(); }

  void push(std::function<void()> op) { ops_.push_back(std::move(op)); }

 private:
  std::vector<std::function<void()>> ops_;
};

// Makes a tape the active recording target for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Detached copy: same value, no gradient path.
Value detach(const Value& v);

// Elementwise and matrix operations. Matrix dimensions follow Eigen rules;
// mismatches throw ConfigError.
Value operator+(const Value& a, const Value& b);
Value operator-(const Value& a, const Value& b);
Value operator*(const Value& a, const Value& b);  // matrix product
Value operator*(double s, const Value& a);
Value cmul(const Value& a, const Value& b);  // elementwise product
Value transpose(const Value& a);
Value diag_of(const Value& a);  // diagonal of a square matrix, column vector
Value reshape(const Value& a, Eigen::Index rows, Eigen::Index cols);
Value vcat(const std::vector<Value>& parts);  // stack column vectors
Value slice_rows(const Value& a, Eigen::Index start, Eigen::Index n);

Value tanh_v(const Value& a);
Value sigmoid_v(const Value& a);
Value relu_v(const Value& a);
Value softplus_v(const Value& a);
Value exp_v(const Value& a);
Value abs_v(const Value& a);  // subgradient 0 at 0
Value square_v(const Value& a);

Value sum(const Value& a);             // 1x1
Value sum_squares(const Value& a);     // 1x1, sum of squared entries

// General matrix inverse (LU). Backward: -Y^T g Y^T with Y = A^{-1}.
Value inverse(const Value& a);

// Quadratic form plus log determinant: e^T Sigma^{-1} e + log det Sigma for
// a column vector e and an SPD Sigma. One jitter retry of
// 1e-9 tr(Sigma)/dim is applied if the Cholesky factorization fails; a
// second failure throws NumericalError.
Value gauss_energy(const Value& e, const Value& sigma);

// Lower-triangular factor from packed entries (row-major lower triangle,
// dim(dim+1)/2 of them). Diagonal entries pass through softplus and are
// floored at diag_floor so L L^T is SPD.
Value lower_triangular(const Value& packed, Eigen::Index dim,
                       double diag_floor);

// Model transition / observation as differentiable operations; backward
// multiplies by the analytic Jacobian at the input point.
Value apply_f(const SSModelSpec& model, const Value& x);
Value apply_h(const SSModelSpec& model, const Value& x);

// Concrete dropout mask including the 1/(1-p) rescale, as a function of the
// scalar logit of the drop probability and fixed uniform draws u (one per
// unit). Relaxation temperature tau. Output is a column vector of factors to
// multiply activations with; differentiable in logit_p.
Value concrete_mask(const Value& logit_p, const Eigen::VectorXd& u,
                    double tau);

// Shannon entropy of Bernoulli(p) with p = sigmoid(logit_p); 1x1.
Value bernoulli_entropy(const Value& logit_p);

// 1/(1 - sigmoid(logit_p)) as a 1x1 value.
Value inv_keep_prob(const Value& logit_p);

}  // namespace kalmanuq
