// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "stglow/errors.hpp"
#include "stglow/tensor.hpp"

namespace stglow {
namespace {

std::mt19937_64 rng_for(int seed) { return std::mt19937_64(static_cast<std::uint64_t>(seed)); }

// d(sum(w ⊙ f(x)))/dx from the tape against central differences.
void expect_gradient(const std::function<Tensor(const Tensor&)>& f, const Matrix& x0,
                     std::uint64_t seed = 3) {
  std::mt19937_64 rng(seed);
  const Matrix probe = f(Tensor(x0)).value();
  const Matrix w = oracle::gaussian(probe.rows(), probe.cols(), rng);
  Tensor x = Tensor::parameter(x0);
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(mul(f(x), Tensor(w))));
  }
  const Matrix numeric = oracle::finite_difference(
      [&](const Matrix& v) { return f(Tensor(v)).value().cwiseProduct(w).sum(); }, x0);
  for (Index i = 0; i < x0.size(); ++i) {
    EXPECT_TRUE(oracle::grad_close(x.grad().data()[i], numeric.data()[i]))
        << "entry " << i << " analytic " << x.grad().data()[i] << " numeric " << numeric.data()[i];
  }
}

TEST(Matmul, MatchesTripleLoop) {
  auto rng = rng_for(1);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix a = oracle::gaussian(3 + trial, 4, rng);
    const Matrix b = oracle::gaussian(4, 2 + trial, rng);
    const Matrix c = matmul(Tensor(a), Tensor(b)).value();
    EXPECT_LT((c - oracle::matmul_loops(a, b)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Matmul, ShapeMismatchRaises) {
  EXPECT_THROW(matmul(Tensor::zeros(2, 3), Tensor::zeros(2, 3)), DimensionError);
}

TEST(Matmul, IdentityLeavesInputUnchanged) {
  auto rng = rng_for(2);
  const Matrix a = oracle::gaussian(4, 4, rng);
  EXPECT_EQ(matmul(Tensor(a), Tensor(Matrix::Identity(4, 4))).value(), a);
}

TEST(Softmax, RowsSumToOne) {
  auto rng = rng_for(3);
  const Matrix x = oracle::gaussian(5, 7, rng, 3.0);
  const Matrix p = softmax_lastdim(Tensor(x)).value();
  for (Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
}

TEST(Softmax, UniformRowGivesEqualWeights) {
  const Matrix p = softmax_lastdim(Tensor::constant(1, 4, 0.3)).value();
  for (Index j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(p(0, j), 0.25);
}

TEST(Softmax, MaskedEntriesAreExactlyZero) {
  auto rng = rng_for(4);
  Matrix x = oracle::gaussian(4, 4, rng);
  std::vector<std::vector<bool>> keep(4, std::vector<bool>(4, true));
  for (Index i = 0; i < 4; ++i)
    for (Index j = i + 1; j < 4; ++j) {
      x(i, j) = kMaskedOut;
      keep[i][j] = false;
    }
  const Matrix p = softmax_lastdim(Tensor(x)).value();
  const Matrix ref = oracle::masked_softmax(x, keep);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) {
      if (!keep[i][j]) EXPECT_EQ(p(i, j), 0.0);
      EXPECT_NEAR(p(i, j), ref(i, j), 1e-14);
    }
}

TEST(Softmax, FullyMaskedRowRaises) {
  Matrix x = Matrix::Zero(2, 3);
  x.row(1).setConstant(kMaskedOut);
  EXPECT_THROW(softmax_lastdim(Tensor(x)), DegenerateMaskError);
}

TEST(Softmax, LargeScoresStayFinite) {
  Matrix x(1, 3);
  x << 1000.0, 999.0, -1000.0;
  const Matrix p = softmax_lastdim(Tensor(x)).value();
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
}

TEST(Gradients, ElementwiseOpsMatchFiniteDifferences) {
  auto rng = rng_for(5);
  const Matrix x = oracle::gaussian(3, 4, rng);
  Matrix pos = x.cwiseAbs().array() + 0.5;
  expect_gradient([](const Tensor& t) { return tanh(t); }, x);
  expect_gradient([](const Tensor& t) { return sigmoid(t); }, x);
  expect_gradient([](const Tensor& t) { return exp(t); }, x);
  expect_gradient([](const Tensor& t) { return square(t); }, x);
  expect_gradient([](const Tensor& t) { return log(t); }, pos);
  expect_gradient([](const Tensor& t) { return reciprocal(t); }, pos);
  expect_gradient([](const Tensor& t) { return log_abs(t); }, pos);
}

TEST(Gradients, StructuralOpsMatchFiniteDifferences) {
  auto rng = rng_for(6);
  const Matrix x = oracle::gaussian(4, 6, rng);
  const Tensor row(oracle::gaussian(1, 6, rng));
  const Tensor other(oracle::gaussian(6, 3, rng));
  expect_gradient([&](const Tensor& t) { return matmul(t, other); }, x);
  expect_gradient([](const Tensor& t) { return transpose(t); }, x);
  expect_gradient([&](const Tensor& t) { return add_row(t, row); }, x);
  expect_gradient([&](const Tensor& t) { return mul_row(t, row); }, x);
  expect_gradient([](const Tensor& t) { return sum_cols(t); }, x);
  expect_gradient([](const Tensor& t) { return sum_rows(t); }, x);
  expect_gradient([](const Tensor& t) { return row_norm(t); }, x);
  expect_gradient([](const Tensor& t) { return reshape(t, 3, 8); }, x);
  expect_gradient([](const Tensor& t) { return slice_cols(t, 1, 3); }, x);
  expect_gradient([](const Tensor& t) { return slice_rows(t, 1, 2); }, x);
  expect_gradient([](const Tensor& t) { return concat_cols({t, square(t)}); }, x);
  expect_gradient([](const Tensor& t) { return concat_rows({t, tanh(t)}); }, x);
  expect_gradient([](const Tensor& t) { return softmax_lastdim(t); }, x);
  const std::vector<Index> idx{2, 0, 2, 3};
  expect_gradient([&](const Tensor& t) { return gather_rows(t, idx); }, x);
}

TEST(Gradients, LogAbsDetIsInverseTranspose) {
  auto rng = rng_for(7);
  const Matrix w = oracle::gaussian(4, 4, rng) + 2.0 * Matrix::Identity(4, 4);
  EXPECT_NEAR(logabsdet(Tensor(w)).item(), std::log(std::abs(oracle::det_cofactor(w))), 1e-12);
  expect_gradient([](const Tensor& t) { return logabsdet(t); }, w);
  expect_gradient([](const Tensor& t) { return inverse(t); }, w);
}

TEST(LogAbsDet, SingularMatrixRaises) {
  Matrix w = Matrix::Ones(3, 3);
  EXPECT_THROW(logabsdet(Tensor(w)), SingularityError);
}

TEST(GroupMin, MatchesBruteForceAndRoutesGradientToArgmin) {
  auto rng = rng_for(8);
  const Matrix v = oracle::gaussian(12, 1, rng);
  Tensor x = Tensor::parameter(v);
  std::vector<Index> argmin;
  Tensor m;
  {
    Tape tape;
    TapeScope scope(tape);
    m = group_min(x, 3, &argmin);
    tape.backward(sum(m));
  }
  for (Index g = 0; g < 4; ++g) {
    Index best = 0;
    for (Index k = 1; k < 3; ++k)
      if (v(g * 3 + k, 0) < v(g * 3 + best, 0)) best = k;
    EXPECT_EQ(argmin[static_cast<std::size_t>(g)], best);
    EXPECT_EQ(m(g, 0), v(g * 3 + best, 0));
    for (Index k = 0; k < 3; ++k) EXPECT_EQ(x.grad()(g * 3 + k, 0), k == best ? 1.0 : 0.0);
  }
}

TEST(GroupMin, TiesGoToLowestIndex) {
  Matrix v(3, 1);
  v << 2.0, 1.0, 1.0;
  std::vector<Index> argmin;
  group_min(Tensor(v), 3, &argmin);
  EXPECT_EQ(argmin[0], 1);
}

TEST(Tape, SharedSubexpressionAccumulates) {
  // y = x*x + x  =>  dy/dx = 2x + 1
  Tensor x = Tensor::parameter(Matrix::Constant(1, 1, 3.0));
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(mul(x, x) + x);
  }
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 7.0);
}

TEST(Tape, EachNodeVisitedOnce) {
  Tensor x = Tensor::parameter(Matrix::Constant(2, 2, 1.0));
  Tape tape;
  TapeScope scope(tape);
  Tensor y = x;
  for (int i = 0; i < 10; ++i) y = y + x;
  tape.backward(sum(y));
  EXPECT_EQ(tape.last_visit_count(), tape.size());
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 11.0);
}

TEST(Tape, ParameterGradientsAccumulateUntilZeroed) {
  Tensor x = Tensor::parameter(Matrix::Constant(1, 1, 2.0));
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(scale(x, 3.0));
  }
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 6.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Tape, NonScalarLossRaises) {
  Tensor x = Tensor::parameter(Matrix::Ones(2, 2));
  Tape tape;
  TapeScope scope(tape);
  EXPECT_THROW(tape.backward(x + x), ContractError);
}

TEST(Tape, NoRecordingWithoutActiveTape) {
  Tensor x = Tensor::parameter(Matrix::Ones(2, 2));
  const Tensor y = x + x;
  EXPECT_FALSE(y.requires_grad());
}

TEST(Numerics, NonFiniteResultRaises) {
  EXPECT_THROW(log(Tensor::zeros(1, 1)), NumericError);
  EXPECT_THROW(reciprocal(Tensor::zeros(1, 1)), NumericError);
}

TEST(GroupedAttention, MatchesPerGroupReference) {
  auto rng = rng_for(9);
  const std::vector<Index> sizes{3, 2};
  const Matrix q = oracle::gaussian(5, 4, rng), k = oracle::gaussian(5, 4, rng),
               v = oracle::gaussian(5, 4, rng);
  std::vector<Matrix> masks;
  Matrix m0 = Matrix::Ones(3, 3);
  m0(0, 1) = m0(0, 2) = m0(1, 2) = kMaskedOut;
  masks.push_back(m0);
  masks.push_back(Matrix::Ones(2, 2));
  std::vector<std::vector<Matrix>> weights;
  const Matrix out = grouped_attention(Tensor(q), Tensor(k), Tensor(v), sizes, masks, 2, &weights).value();

  Index off = 0;
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    const Index n = sizes[g];
    std::vector<std::vector<bool>> keep(static_cast<std::size_t>(n), std::vector<bool>(static_cast<std::size_t>(n)));
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) keep[i][j] = masks[g](i, j) == 1.0;
    for (Index h = 0; h < 2; ++h) {
      const Matrix qh = q.block(off, h * 2, n, 2), kh = k.block(off, h * 2, n, 2), vh = v.block(off, h * 2, n, 2);
      const Matrix p = oracle::masked_softmax(oracle::matmul_loops(qh, kh.transpose()) / std::sqrt(2.0), keep);
      EXPECT_LT((p - weights[g][static_cast<std::size_t>(h)]).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LT((oracle::matmul_loops(p, vh) - out.block(off, h * 2, n, 2)).cwiseAbs().maxCoeff(), 1e-12);
    }
    off += n;
  }
}

TEST(GroupedAttention, GradientMatchesFiniteDifferences) {
  auto rng = rng_for(10);
  const std::vector<Index> sizes{3, 1, 2};
  Matrix mask = Matrix::Ones(3, 3);
  mask(0, 2) = kMaskedOut;
  const std::vector<Matrix> masks{mask, Matrix::Ones(1, 1), Matrix::Ones(2, 2)};
  const Matrix k = oracle::gaussian(6, 4, rng), v = oracle::gaussian(6, 4, rng);
  const Matrix q = oracle::gaussian(6, 4, rng);
  expect_gradient([&](const Tensor& t) { return grouped_attention(t, Tensor(k), Tensor(v), sizes, masks, 2); }, q);
  expect_gradient([&](const Tensor& t) { return grouped_attention(Tensor(q), t, Tensor(v), sizes, masks, 2); }, k);
  expect_gradient([&](const Tensor& t) { return grouped_attention(Tensor(q), Tensor(k), t, sizes, masks, 2); }, v);
}

}  // namespace
}  // namespace stglow
