#include "doctest.h"

#include <cmath>

#include "kalmanuq/errors.hpp"
#include "kalmanuq/layers.hpp"
#include "kalmanuq/random.hpp"

using namespace kalmanuq;

TEST_CASE("xavier init stays inside the fan bound and fills the range") {
  RandomStream rng(17);
  const int out = 10, in = 7;
  const double bound = 0.5940885257860046;  // sqrt(6 / 17)
  Eigen::MatrixXd w = xavier_uniform(out, in, rng);
  REQUIRE(w.rows() == out);
  REQUIRE(w.cols() == in);
  CHECK(w.cwiseAbs().maxCoeff() <= bound);
  CHECK(w.cwiseAbs().maxCoeff() > 0.5 * bound);  // not collapsed near zero
  CHECK(w.minCoeff() < 0.0);
  CHECK(w.maxCoeff() > 0.0);
}

TEST_CASE("dense layer computes act(W x + b) with registered parameters") {
  ParameterSet params;
  RandomStream rng(2);
  DenseLayer layer(params, "fc", 3, 2, Activation::tanh, rng);

  const Eigen::MatrixXd w = params.find("fc.weight")->value();
  const Eigen::MatrixXd b = params.find("fc.bias")->value();
  CHECK(b.cwiseAbs().maxCoeff() == 0.0);

  Eigen::VectorXd x(3);
  x << 0.2, -0.5, 1.1;
  Value y = layer.forward(Value::constant(x));
  Eigen::VectorXd expect = (w * x + b).array().tanh().matrix();
  CHECK((y.value() - expect).cwiseAbs().maxCoeff() < 1e-15);

  CHECK(layer.weight_norm_sq().scalar() ==
        doctest::Approx(w.squaredNorm()).epsilon(1e-14));

  // weight_scale rescales the initial weights.
  ParameterSet params2;
  RandomStream rng2(2);
  DenseLayer scaled(params2, "fc", 3, 2, Activation::tanh, rng2, 1e-2);
  CHECK((params2.find("fc.weight")->value() - 1e-2 * w).cwiseAbs().maxCoeff() < 1e-16);
}

TEST_CASE("dense layer gradient flows to weights and bias") {
  ParameterSet params;
  RandomStream rng(4);
  DenseLayer layer(params, "fc", 2, 2, Activation::relu, rng);
  Eigen::VectorXd x(2);
  x << 1.0, 2.0;

  Tape tape;
  {
    TapeScope scope(tape);
    Value loss = sum_squares(layer.forward(Value::constant(x)));
    tape.backward(loss);
  }
  // Central difference on one weight entry.
  Value* wv = params.find("fc.weight");
  const double g = wv->grad()(0, 0);
  const double h = 1e-6;
  auto eval = [&](double delta) {
    wv->mutable_value()(0, 0) += delta;
    double out = sum_squares(layer.forward(Value::constant(x))).scalar();
    wv->mutable_value()(0, 0) -= delta;
    return out;
  };
  const double fd = (eval(h) - eval(-h)) / (2.0 * h);
  CHECK(g == doctest::Approx(fd).epsilon(1e-5));
  CHECK(params.find("fc.bias")->grad().size() > 0);
}

TEST_CASE("gru with all-zero parameters halves its hidden state") {
  ParameterSet params;
  RandomStream rng(9);
  GRUCell gru(params, "gru", 3, 5, rng);

  auto zeros = params.snapshot();
  for (auto& m : zeros) m.setZero();
  params.restore(zeros);

  Eigen::VectorXd h0(5);
  h0 << 1.0, -2.0, 0.5, 4.0, -0.25;
  Value h1 = gru.forward(Value::constant(Eigen::VectorXd::Ones(3)),
                         Value::constant(h0));
  CHECK((h1.value() - 0.5 * h0).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(gru.initial_state().value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gru gradient reaches every gate parameter") {
  ParameterSet params;
  RandomStream rng(12);
  GRUCell gru(params, "gru", 2, 3, rng);
  Eigen::VectorXd x(2);
  x << 0.3, -0.9;

  Tape tape;
  {
    TapeScope scope(tape);
    Value h = gru.initial_state();
    for (int t = 0; t < 3; ++t) h = gru.forward(Value::constant(x), h);
    tape.backward(sum_squares(h));
  }
  for (const auto& entry : params.entries()) {
    INFO(entry.path);
    CHECK(entry.var.grad().size() > 0);
  }

  // Finite-difference spot check through the recurrence.
  Value* wz = params.find("gru.weight_xz");
  REQUIRE(wz != nullptr);
  const double g = wz->grad()(0, 0);
  auto eval = [&](double delta) {
    wz->mutable_value()(0, 0) += delta;
    Value h = gru.initial_state();
    for (int t = 0; t < 3; ++t) h = gru.forward(Value::constant(x), h);
    double out = sum_squares(h).scalar();
    wz->mutable_value()(0, 0) -= delta;
    return out;
  };
  const double h = 1e-6;
  const double fd = (eval(h) - eval(-h)) / (2.0 * h);
  CHECK(g == doctest::Approx(fd).epsilon(1e-5));
}

TEST_CASE("hard dropout masks average back to the identity") {
  ParameterSet params;
  ConcreteDropoutLayer drop(params, "d", 1, 0.3);
  CHECK(drop.p() == doctest::Approx(0.3).epsilon(1e-12));

  RandomStream rng(23);
  Eigen::VectorXd x(1);
  x << 2.0;
  double acc = 0.0;
  int kept = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    MaskDraw draw = draw_mask(1, rng);
    Value y = drop.apply(Value::constant(x), DropoutMode::infer_bernoulli, &draw);
    const double v = y.value()(0, 0);
    // Either dropped or rescaled by 1/(1-p); nothing in between.
    CHECK((v == 0.0 || v == doctest::Approx(2.0 / 0.7).epsilon(1e-12)));
    if (v != 0.0) ++kept;
    acc += v;
  }
  CHECK(static_cast<double>(kept) / n == doctest::Approx(0.7).epsilon(0.05));
  CHECK(acc / n == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("dropout with zero probability is an exact identity in every mode") {
  ParameterSet params;
  ConcreteDropoutLayer drop(params, "d", 3, 0.0);
  CHECK(drop.p() == 0.0);
  RandomStream rng(31);
  Eigen::VectorXd x(3);
  x << 0.1, -7.0, 3.5;
  MaskDraw draw = draw_mask(3, rng);
  for (DropoutMode mode : {DropoutMode::off, DropoutMode::train_relaxed,
                           DropoutMode::infer_bernoulli}) {
    Value y = drop.apply(Value::constant(x), mode, &draw);
    CHECK(y.value()(0, 0) == x(0));
    CHECK(y.value()(1, 0) == x(1));
    CHECK(y.value()(2, 0) == x(2));
  }
}

TEST_CASE("stochastic dropout without a mask draw is rejected") {
  ParameterSet params;
  ConcreteDropoutLayer drop(params, "d", 2, 0.4);
  Eigen::VectorXd x = Eigen::VectorXd::Ones(2);
  CHECK_THROWS_AS(drop.apply(Value::constant(x), DropoutMode::train_relaxed, nullptr),
                  ConfigError);
  MaskDraw wrong = {Eigen::VectorXd::Constant(3, 0.5)};
  CHECK_THROWS_AS(drop.apply(Value::constant(x), DropoutMode::infer_bernoulli, &wrong),
                  ConfigError);
  CHECK_THROWS_AS(ConcreteDropoutLayer(params, "d2", 2, 1.0), ConfigError);
  CHECK_THROWS_AS(ConcreteDropoutLayer(params, "d3", 2, -0.1), ConfigError);
}

TEST_CASE("normalizer fit inverts the per-coordinate spread") {
  std::vector<Eigen::VectorXd> samples;
  Eigen::VectorXd a(2), b(2);
  a << 1.0, 0.0;
  b << 3.0, 4.0;
  samples.push_back(a);
  samples.push_back(b);
  // Population std per coordinate: 1 and 2.
  FeatureNormalizer norm = FeatureNormalizer::fit(samples);
  CHECK(norm.inv_std()(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(norm.inv_std()(1) == doctest::Approx(0.5).epsilon(1e-12));

  Eigen::VectorXd x(2);
  x << 4.0, 4.0;
  Value y = norm.apply(Value::constant(x));
  CHECK(y.value()(0, 0) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(y.value()(1, 0) == doctest::Approx(2.0).epsilon(1e-12));

  // Constant coordinates hit the floor instead of dividing by zero.
  FeatureNormalizer flat = FeatureNormalizer::fit({a, a});
  CHECK(flat.inv_std()(0) == doctest::Approx(1e9).epsilon(1e-6));
  CHECK_THROWS_AS(FeatureNormalizer::fit({}), ConfigError);
}

TEST_CASE("parameter set rejects duplicates and clips the global gradient norm") {
  ParameterSet params;
  params.add("a", Eigen::MatrixXd::Ones(2, 1));
  CHECK_THROWS_AS(params.add("a", Eigen::MatrixXd::Ones(2, 1)), ConfigError);
  CHECK(params.find("missing") == nullptr);

  Value b = params.add("b", Eigen::MatrixXd::Zero(2, 1));
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum_squares(3.0 * b + Value::constant(Eigen::MatrixXd::Ones(2, 1))));
  }
  const double norm_before = params.grad_norm();
  CHECK(norm_before > 1.0);
  params.clip_grad(1.0);
  CHECK(params.grad_norm() == doctest::Approx(1.0).epsilon(1e-9));
  params.clip_grad(0.5);  // second clip halves it again
  CHECK(params.grad_norm() == doctest::Approx(0.5).epsilon(1e-9));
  params.zero_grad();
  CHECK(params.grad_norm() == 0.0);
}
