#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kalmanuq/autodiff.hpp"
#include "kalmanuq/random.hpp"

namespace kalmanuq {

// Named collection of trainable leaves. Layers register their parameters
// here; the optimizer and checkpoints address them by path.
class ParameterSet {
 public:
  struct Entry {
    std::string path;
    Value var;
  };

  // Registers a new parameter. Paths must be unique.
  Value add(const std::string& path, Eigen::MatrixXd init);

  Value* find(const std::string& path);
  const std::vector<Entry>& entries() const { return entries_; }

  void zero_grad();
  // Euclidean norm over all parameter gradients.
  double grad_norm() const;
  // Rescales every gradient so the global norm does not exceed max_norm.
  void clip_grad(double max_norm);

  // Deep copies of all parameter values, in registration order.
  std::vector<Eigen::MatrixXd> snapshot() const;
  void restore(const std::vector<Eigen::MatrixXd>& values);

 private:
  std::vector<Entry> entries_;
};

enum class Activation { none, relu, tanh };

// Fully connected layer y = act(W x + b).
class DenseLayer {
 public:
  // weight_scale multiplies the Xavier-uniform initial weights; biases start
  // at zero.
  DenseLayer(ParameterSet& params, const std::string& path, int in_dim,
             int out_dim, Activation act, RandomStream& init_rng,
             double weight_scale = 1.0);

  Value forward(const Value& x) const;

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  // Sum of squared weight entries (excluding bias) as a graph value; used by
  // the dropout regularizer.
  Value weight_norm_sq() const;

 private:
  Value w_, b_;
  int in_dim_, out_dim_;
  Activation act_;
};

// Gated recurrent unit with update gate z, reset gate r and tanh candidate:
//   z = sigmoid(Wz x + Uz h + bz)
//   r = sigmoid(Wr x + Ur h + br)
//   c = tanh(Wn x + r .* (Un h) + bn)
//   h' = (1 - z) .* c + z .* h
// All-zero parameters give h' = 0.5 h.
class GRUCell {
 public:
  GRUCell(ParameterSet& params, const std::string& path, int in_dim,
          int hidden_dim, RandomStream& init_rng);

  Value forward(const Value& x, const Value& h_prev) const;
  Value initial_state() const;  // zeros

  int hidden_dim() const { return hidden_dim_; }

 private:
  Value wz_, uz_, bz_, wr_, ur_, br_, wn_, un_, bn_;
  int in_dim_, hidden_dim_;
};

// How a dropout layer behaves for a given run.
enum class DropoutMode {
  off,              // identity
  train_relaxed,    // concrete relaxation, differentiable in logit_p
  infer_bernoulli,  // hard 0/1 masks scaled by 1/(1-p)
};

// Per-layer random draw backing one mask realization: one uniform per unit.
// Fixed for however long the caller reuses it (one trajectory by default).
struct MaskDraw {
  Eigen::VectorXd u;
};

MaskDraw draw_mask(int width, RandomStream& rng);

// Dropout on the inputs of a dense layer with a trainable drop probability,
// parameterized by its logit. Relaxation temperature 0.1.
class ConcreteDropoutLayer {
 public:
  ConcreteDropoutLayer(ParameterSet& params, const std::string& path,
                       int width, double p_init);

  // Applies the mask for the given mode. `draw` must hold `width` uniforms
  // for the stochastic modes and may be empty for DropoutMode::off.
  Value apply(const Value& x, DropoutMode mode, const MaskDraw* draw) const;

  double p() const;
  Value logit_p() const { return logit_p_; }
  int width() const { return width_; }
  double tau() const { return tau_; }

 private:
  Value logit_p_;
  int width_;
  double tau_ = 0.1;
};

// Per-coordinate scale (1/std) applied to network inputs. Calibrated once
// from training data and then frozen.
class FeatureNormalizer {
 public:
  FeatureNormalizer() = default;
  explicit FeatureNormalizer(Eigen::VectorXd inv_std)
      : inv_std_(std::move(inv_std)) {}

  // Per-coordinate standard deviation of the sample rows, floored at 1e-9.
  static FeatureNormalizer fit(const std::vector<Eigen::VectorXd>& samples);

  Value apply(const Value& x) const;
  bool fitted() const { return inv_std_.size() > 0; }
  const Eigen::VectorXd& inv_std() const { return inv_std_; }

 private:
  Eigen::VectorXd inv_std_;
};

// Xavier-uniform weight matrix: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Eigen::MatrixXd xavier_uniform(int out_dim, int in_dim, RandomStream& rng);

}  // namespace kalmanuq
