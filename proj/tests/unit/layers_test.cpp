// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "stglow/errors.hpp"
#include "stglow/flow.hpp"
#include "stglow/layers.hpp"
#include "stglow/optim.hpp"
#include "stglow/random.hpp"

namespace stglow {
namespace {

double sigmoid_ref(double v) { return 1.0 / (1.0 + std::exp(-v)); }

TEST(Linear, AffineMap) {
  Rng rng(1);
  Linear lin(3, 2, rng);
  std::mt19937_64 g(1);
  const Matrix x = oracle::gaussian(4, 3, g);
  const Matrix expected =
      (oracle::matmul_loops(x, lin.weight().value()).rowwise() + lin.bias().value().row(0)).eval();
  EXPECT_LT((lin(Tensor(x)).value() - expected).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(lin.in_features(), 3);
  EXPECT_EQ(lin.out_features(), 2);
}

TEST(Mlp, ReluBetweenLayersOnly) {
  Rng rng(2);
  Mlp mlp({2, 4, 3}, rng);
  std::mt19937_64 g(2);
  const Matrix x = oracle::gaussian(5, 2, g);
  const Matrix h = mlp.layer(0)(Tensor(x)).value().cwiseMax(0.0);
  const Matrix y = mlp.layer(1)(Tensor(h)).value();
  EXPECT_LT((mlp(Tensor(x)).value() - y).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(y.minCoeff(), 0.0);  // no activation on the output
}

TEST(Gru, MatchesGateEquations) {
  Rng rng(3);
  GruCell cell(3, 2, rng);
  ParameterSet ps;
  cell.collect(ps, "gru");
  const Matrix wi = ps.find("gru.input.weight").value(), bi = ps.find("gru.input.bias").value();
  const Matrix wh = ps.find("gru.recurrent.weight").value(), bh = ps.find("gru.recurrent.bias").value();
  std::mt19937_64 g(3);
  const Matrix x = oracle::gaussian(1, 3, g), h = oracle::gaussian(1, 2, g);
  const Matrix gi = x * wi + bi, gh = h * wh + bh;
  Matrix expected(1, 2);
  for (Index j = 0; j < 2; ++j) {
    const double r = sigmoid_ref(gi(0, j) + gh(0, j));
    const double z = sigmoid_ref(gi(0, 2 + j) + gh(0, 2 + j));
    const double n = std::tanh(gi(0, 4 + j) + r * gh(0, 4 + j));
    expected(0, j) = (1.0 - z) * n + z * h(0, j);
  }
  EXPECT_LT((cell(Tensor(x), Tensor(h)).value() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gru, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  GruCell cell(3, 4, rng);
  std::mt19937_64 g(4);
  const Tensor x(oracle::gaussian(2, 3, g)), h0(oracle::gaussian(2, 4, g));
  auto loss = [&] { return sum(square(cell(x, cell(x, h0)))); };
  ParameterSet ps;
  cell.collect(ps, "gru");
  ps.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(loss());
  }
  for (auto& [name, p] : ps) {
    const Matrix analytic = p.grad();
    Matrix& v = p.mutable_value();
    for (Index i = 0; i < v.size(); ++i) {
      const double keep = v.data()[i];
      v.data()[i] = keep + 1e-6;
      const double up = loss().item();
      v.data()[i] = keep - 1e-6;
      const double down = loss().item();
      v.data()[i] = keep;
      EXPECT_TRUE(oracle::grad_close(analytic.data()[i], (up - down) / 2e-6)) << name << i;
    }
  }
}

TEST(Attention, HeadsMustDivideWidth) {
  Rng rng(5);
  EXPECT_THROW(MultiHeadAttention(10, 4, rng), ConfigError);
}

TEST(ParameterSet, FindAndCount) {
  Rng rng(6);
  Linear lin(3, 2, rng);
  ParameterSet ps;
  lin.collect(ps, "lin");
  EXPECT_EQ(ps.scalar_count(), 8);
  EXPECT_EQ(ps.find("lin.weight").rows(), 3);
  EXPECT_THROW(ps.find("lin.missing"), LookupError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // With bias correction the first update is lr * g / (|g| + eps) = lr * sign(g).
  ParameterSet ps;
  Tensor p = Tensor::parameter(Matrix::Constant(1, 2, 1.0));
  ps.add("p", p);
  Matrix g(1, 2);
  g << 3.0, -0.5;
  p.node()->accumulate(g);
  AdamState st;
  AdamOptions o;
  o.lr = 0.1;
  adam_step(ps, st, o);
  EXPECT_NEAR(p(0, 0), 1.0 - 0.1 * 3.0 / (3.0 + o.eps), 1e-15);
  EXPECT_NEAR(p(0, 1), 1.0 + 0.1 * 0.5 / (0.5 + o.eps), 1e-15);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, MatchesReferenceOverSeveralSteps) {
  ParameterSet ps;
  Tensor p = Tensor::parameter(Matrix::Constant(1, 1, 2.0));
  ps.add("p", p);
  AdamState st;
  AdamOptions o;
  o.lr = 0.05;
  o.weight_decay = 0.01;
  double w = 2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    const double grad = 2.0 * w;  // d(w^2)/dw
    ps.zero_grad();
    p.node()->accumulate(Matrix::Constant(1, 1, grad));
    adam_step(ps, st, o);
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad * grad;
    w -= o.lr * o.weight_decay * w;
    w -= o.lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + o.eps);
    EXPECT_NEAR(p(0, 0), w, 1e-12) << t;
  }
}

TEST(Adam, ParameterWithoutGradientOnlyDecays) {
  ParameterSet ps;
  Tensor p = Tensor::parameter(Matrix::Constant(1, 1, 1.0));
  ps.add("p", p);
  AdamState st;
  AdamOptions o;
  o.lr = 0.1;
  o.weight_decay = 0.5;
  adam_step(ps, st, o);
  EXPECT_NEAR(p(0, 0), 0.95, 1e-12);
}

TEST(Adam, StateMismatchRaises) {
  ParameterSet ps;
  ps.add("p", Tensor::parameter(Matrix::Zero(1, 1)));
  AdamState st;
  st.m.push_back(Matrix::Zero(2, 2));
  st.v.push_back(Matrix::Zero(2, 2));
  EXPECT_THROW(adam_step(ps, st, AdamOptions{}), DimensionError);
}

TEST(Random, StreamsAreIndependentAndReproducible) {
  EXPECT_EQ(stream_seed(1, 2, 3), stream_seed(1, 2, 3));
  EXPECT_NE(stream_seed(1, 2, 3), stream_seed(1, 3, 2));
  EXPECT_NE(stream_seed(1, 2, 3), stream_seed(2, 2, 3));
  Rng a = make_rng(5, Stream::kInit), b = make_rng(5, Stream::kInit);
  EXPECT_EQ(a(), b());
  const Matrix q = random_rotation(6, a);
  EXPECT_NEAR(oracle::det_cofactor(q), 1.0, 1e-12);
}

}  // namespace
}  // namespace stglow
