// SPDX-License-Identifier: Apache-2.0
#include "stglow/tensor.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "stglow/errors.hpp"

namespace stglow {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::string shape_of(const Matrix& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
  }
}

}  // namespace

void detail::Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) {}

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Index rows, Index cols) { return Tensor(Matrix::Zero(rows, cols)); }

Tensor Tensor::constant(Index rows, Index cols, double v) {
  return Tensor(Matrix::Constant(rows, cols, v));
}

Tensor Tensor::scalar(double v) { return Tensor(Matrix::Constant(1, 1, v)); }

Tensor Tensor::parameter(Matrix value) { return Tensor(std::move(value), true); }

std::string Tensor::shape_str() const { return shape_of(node_->value); }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str());
  return node_->value(0, 0);
}

Matrix Tensor::grad() const {
  if (has_grad()) return node_->grad;
  return Matrix::Zero(rows(), cols());
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got " + loss.shape_str());
  }
  const auto& root = loss.node();
  if (!root->requires_grad || root->leaf) {
    throw ContractError("backward: loss is not attached to a tape");
  }
  root->accumulate(Matrix::Ones(1, 1));
  visits_ = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node& n = **it;
    ++visits_;
    if (n.grad.size() == 0 || !n.backprop) continue;
    n.backprop(n.grad);
  }
}

void backward(const Tensor& loss) {
  Tape* tape = active_tape();
  if (tape == nullptr) throw ContractError("backward: no active tape");
  tape->backward(loss);
}

Tensor make_result(Matrix value, std::initializer_list<const Tensor*> inputs,
                   std::function<void(const Matrix&)> backprop) {
  bool needs = false;
  for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  return make_result(std::move(value), needs, std::move(backprop));
}

Tensor make_result(Matrix value, bool needs_grad, std::function<void(const Matrix&)> backprop) {
  if (!value.allFinite()) {
    throw NumericError("non-finite value produced by operation with output shape " +
                       shape_of(value));
  }
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  Tape* tape = active_tape();
  if (tape != nullptr && needs_grad) {
    node->requires_grad = true;
    node->leaf = false;
    node->backprop = std::move(backprop);
    tape->record(node);
  }
  return Tensor(std::move(node));
}

namespace {

// Gradient sink for an input: accumulates only when the input participates.
inline void push(const Tensor& t, const Matrix& g) {
  if (t.requires_grad()) t.node()->accumulate(g);
}

template <class F>
Tensor unary(const Tensor& a, Matrix value, F local_grad) {
  return make_result(std::move(value), {&a}, [a, local_grad](const Matrix& g) {
    if (a.requires_grad()) push(a, local_grad(g));
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + a.shape_str() + " x " +
                         b.shape_str());
  }
  Matrix out = a.value() * b.value();
  return make_result(std::move(out), {&a, &b}, [a, b](const Matrix& g) {
    if (a.requires_grad()) push(a, g * b.value().transpose());
    if (b.requires_grad()) push(b, a.value().transpose() * g);
  });
}

Tensor transpose(const Tensor& a) {
  Matrix out = a.value().transpose();
  return unary(a, std::move(out), [](const Matrix& g) -> Matrix { return g.transpose(); });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Matrix out = a.value() + b.value();
  return make_result(std::move(out), {&a, &b}, [a, b](const Matrix& g) {
    push(a, g);
    push(b, g);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Matrix out = a.value() - b.value();
  return make_result(std::move(out), {&a, &b}, [a, b](const Matrix& g) {
    push(a, g);
    if (b.requires_grad()) push(b, -g);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Matrix out = a.value().cwiseProduct(b.value());
  return make_result(std::move(out), {&a, &b}, [a, b](const Matrix& g) {
    if (a.requires_grad()) push(a, g.cwiseProduct(b.value()));
    if (b.requires_grad()) push(b, g.cwiseProduct(a.value()));
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, a.value() * s, [s](const Matrix& g) -> Matrix { return g * s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  Matrix out = a.value().array() + s;
  return unary(a, std::move(out), [](const Matrix& g) -> Matrix { return g; });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: expected [1x" + std::to_string(a.cols()) + "] row, got " +
                         row.shape_str());
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(out), {&a, &row}, [a, row](const Matrix& g) {
    push(a, g);
    if (row.requires_grad()) push(row, g.colwise().sum());
  });
}

Tensor mul_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("mul_row: expected [1x" + std::to_string(a.cols()) + "] row, got " +
                         row.shape_str());
  }
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return make_result(std::move(out), {&a, &row}, [a, row](const Matrix& g) {
    if (a.requires_grad()) {
      Matrix ga = g.array().rowwise() * row.value().row(0).array();
      push(a, ga);
    }
    if (row.requires_grad()) push(row, g.cwiseProduct(a.value()).colwise().sum());
  });
}

Tensor relu(const Tensor& a) {
  Matrix out = a.value().cwiseMax(0.0);
  return unary(a, std::move(out), [a](const Matrix& g) -> Matrix {
    return (a.value().array() > 0.0).select(g, 0.0);
  });
}

Tensor tanh(const Tensor& a) {
  Matrix out = a.value().array().tanh();
  Matrix y = out;
  return unary(a, std::move(out), [y](const Matrix& g) -> Matrix {
    return g.array() * (1.0 - y.array().square());
  });
}

Tensor sigmoid(const Tensor& a) {
  Matrix out = (1.0 + (-a.value().array()).exp()).inverse();
  Matrix y = out;
  return unary(a, std::move(out), [y](const Matrix& g) -> Matrix {
    return g.array() * y.array() * (1.0 - y.array());
  });
}

Tensor exp(const Tensor& a) {
  Matrix out = a.value().array().exp();
  Matrix y = out;
  return unary(a, std::move(out), [y](const Matrix& g) -> Matrix { return g.cwiseProduct(y); });
}

Tensor log(const Tensor& a) {
  Matrix out = a.value().array().log();
  return unary(a, std::move(out), [a](const Matrix& g) -> Matrix {
    return g.array() / a.value().array();
  });
}

Tensor log_abs(const Tensor& a) {
  Matrix out = a.value().array().abs().log();
  return unary(a, std::move(out), [a](const Matrix& g) -> Matrix {
    return g.array() / a.value().array();
  });
}

Tensor square(const Tensor& a) {
  Matrix out = a.value().array().square();
  return unary(a, std::move(out), [a](const Matrix& g) -> Matrix {
    return 2.0 * g.array() * a.value().array();
  });
}

Tensor reciprocal(const Tensor& a) {
  Matrix out = a.value().cwiseInverse();
  Matrix y = out;
  return unary(a, std::move(out), [y](const Matrix& g) -> Matrix {
    return -g.array() * y.array().square();
  });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  return unary(a, std::move(out), [a, lo, hi](const Matrix& g) -> Matrix {
    return (a.value().array() >= lo && a.value().array() <= hi).select(g, 0.0);
  });
}

Tensor sum(const Tensor& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Index r = a.rows(), c = a.cols();
  return unary(a, std::move(out), [r, c](const Matrix& g) -> Matrix {
    return Matrix::Constant(r, c, g(0, 0));
  });
}

Tensor mean(const Tensor& a) {
  Matrix out(1, 1);
  const double n = static_cast<double>(a.size());
  out(0, 0) = a.value().sum() / n;
  const Index r = a.rows(), c = a.cols();
  return unary(a, std::move(out), [r, c, n](const Matrix& g) -> Matrix {
    return Matrix::Constant(r, c, g(0, 0) / n);
  });
}

Tensor sum_cols(const Tensor& a) {
  Matrix out = a.value().rowwise().sum();
  const Index c = a.cols();
  return unary(a, std::move(out), [c](const Matrix& g) -> Matrix {
    return g.col(0).replicate(1, c);
  });
}

Tensor sum_rows(const Tensor& a) {
  Matrix out = a.value().colwise().sum();
  const Index r = a.rows();
  return unary(a, std::move(out), [r](const Matrix& g) -> Matrix {
    return g.row(0).replicate(r, 1);
  });
}

Tensor row_norm(const Tensor& a) {
  Matrix out = a.value().rowwise().norm();
  Matrix n = out;
  return unary(a, std::move(out), [a, n](const Matrix& g) -> Matrix {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    for (Index i = 0; i < a.rows(); ++i) {
      if (n(i, 0) > 0.0) ga.row(i) = a.value().row(i) * (g(i, 0) / n(i, 0));
    }
    return ga;
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const Index r = parts[0].rows();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) {
      throw DimensionError("concat_cols: row mismatch " + parts[0].shape_str() + " vs " +
                           p.shape_str());
    }
    total += p.cols();
  }
  Matrix out(r, total);
  Index off = 0;
  bool needs = false;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
    needs = needs || p.requires_grad();
  }
  std::vector<Tensor> keep(parts.begin(), parts.end());
  return make_result(std::move(out), needs, [keep](const Matrix& g) {
    Index o = 0;
    for (const auto& p : keep) {
      if (p.requires_grad()) push(p, g.middleCols(o, p.cols()));
      o += p.cols();
    }
  });
}

Tensor concat_cols(std::initializer_list<Tensor> parts) {
  return concat_cols(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const Index c = parts[0].cols();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) {
      throw DimensionError("concat_rows: column mismatch " + parts[0].shape_str() + " vs " +
                           p.shape_str());
    }
    total += p.rows();
  }
  Matrix out(total, c);
  Index off = 0;
  bool needs = false;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
    needs = needs || p.requires_grad();
  }
  std::vector<Tensor> keep(parts.begin(), parts.end());
  return make_result(std::move(out), needs, [keep](const Matrix& g) {
    Index o = 0;
    for (const auto& p : keep) {
      if (p.requires_grad()) push(p, g.middleRows(o, p.rows()));
      o += p.rows();
    }
  });
}

Tensor concat_rows(std::initializer_list<Tensor> parts) {
  return concat_rows(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor slice_cols(const Tensor& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw DimensionError("slice_cols: range [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " + a.shape_str());
  }
  Matrix out = a.value().middleCols(start, count);
  const Index r = a.rows(), c = a.cols();
  return unary(a, std::move(out), [r, c, start, count](const Matrix& g) -> Matrix {
    Matrix ga = Matrix::Zero(r, c);
    ga.middleCols(start, count) = g;
    return ga;
  });
}

Tensor slice_rows(const Tensor& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " + a.shape_str());
  }
  Matrix out = a.value().middleRows(start, count);
  const Index r = a.rows(), c = a.cols();
  return unary(a, std::move(out), [r, c, start, count](const Matrix& g) -> Matrix {
    Matrix ga = Matrix::Zero(r, c);
    ga.middleRows(start, count) = g;
    return ga;
  });
}

Tensor gather_rows(const Tensor& a, std::span<const Index> index) {
  Matrix out(static_cast<Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= a.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(index[i]) + " outside " +
                           a.shape_str());
    }
    out.row(static_cast<Index>(i)) = a.value().row(index[i]);
  }
  std::vector<Index> idx(index.begin(), index.end());
  const Index r = a.rows(), c = a.cols();
  return unary(a, std::move(out), [idx, r, c](const Matrix& g) -> Matrix {
    Matrix ga = Matrix::Zero(r, c);
    for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(static_cast<Index>(i));
    return ga;
  });
}

Tensor reshape(const Tensor& a, Index rows, Index cols) {
  if (rows * cols != a.size()) {
    throw DimensionError("reshape: cannot view " + a.shape_str() + " as [" +
                         std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  const Index r = a.rows(), c = a.cols();
  return unary(a, std::move(out), [r, c](const Matrix& g) -> Matrix {
    return Eigen::Map<const Matrix>(g.data(), r, c);
  });
}

namespace {

// Row-wise masked softmax of a score block.
Matrix softmax_rows(const Matrix& s) {
  Matrix p(s.rows(), s.cols());
  for (Index i = 0; i < s.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < s.cols(); ++j) {
      if (!is_masked(s(i, j))) mx = std::max(mx, s(i, j));
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw DegenerateMaskError("softmax: every entry of row " + std::to_string(i) +
                                " is masked");
    }
    double z = 0.0;
    for (Index j = 0; j < s.cols(); ++j) {
      const double e = is_masked(s(i, j)) ? 0.0 : std::exp(s(i, j) - mx);
      p(i, j) = e;
      z += e;
    }
    p.row(i) /= z;
  }
  return p;
}

// d(loss)/d(scores) given the softmax output and d(loss)/d(output).
Matrix softmax_backward(const Matrix& p, const Matrix& g) {
  Matrix gs = p.cwiseProduct(g);
  const Eigen::VectorXd dots = gs.rowwise().sum();
  gs -= p.cwiseProduct(dots.replicate(1, p.cols()));
  return gs;
}

}  // namespace

Tensor softmax_lastdim(const Tensor& x) {
  Matrix p = softmax_rows(x.value());
  Matrix saved = p;
  return unary(x, std::move(p), [saved](const Matrix& g) -> Matrix {
    return softmax_backward(saved, g);
  });
}

Tensor group_min(const Tensor& values, Index group, std::vector<Index>* argmin) {
  if (values.cols() != 1) throw DimensionError("group_min: expected a column, got " + values.shape_str());
  if (group <= 0) throw ContractError("group_min: group size must be positive");
  if (values.rows() % group != 0) {
    throw DimensionError("group_min: " + std::to_string(values.rows()) +
                         " rows not divisible by group " + std::to_string(group));
  }
  const Index n = values.rows() / group;
  Matrix out(n, 1);
  std::vector<Index> best(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Index b = i * group;
    for (Index k = 1; k < group; ++k) {
      if (values(i * group + k, 0) < values(b, 0)) b = i * group + k;
    }
    best[static_cast<std::size_t>(i)] = b;
    out(i, 0) = values(b, 0);
  }
  if (argmin != nullptr) {
    argmin->resize(best.size());
    for (std::size_t i = 0; i < best.size(); ++i) (*argmin)[i] = best[i] - static_cast<Index>(i) * group;
  }
  const Index r = values.rows();
  return unary(values, std::move(out), [best, r](const Matrix& g) -> Matrix {
    Matrix gv = Matrix::Zero(r, 1);
    for (std::size_t i = 0; i < best.size(); ++i) gv(best[i], 0) = g(static_cast<Index>(i), 0);
    return gv;
  });
}

Tensor logabsdet(const Tensor& w, double min_abs_det) {
  if (w.rows() != w.cols()) throw DimensionError("logabsdet: non-square " + w.shape_str());
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd(w.value()));
  const Eigen::MatrixXd& packed = lu.matrixLU();
  double lad = 0.0;
  for (Index i = 0; i < packed.rows(); ++i) {
    const double u = std::abs(packed(i, i));
    if (u == 0.0) throw SingularityError("logabsdet: matrix is exactly singular");
    lad += std::log(u);
  }
  if (lad < std::log(min_abs_det)) {
    throw SingularityError("logabsdet: |det W| = " + std::to_string(std::exp(lad)) +
                           " below threshold");
  }
  Matrix out(1, 1);
  out(0, 0) = lad;
  return make_result(std::move(out), {&w}, [w, lu](const Matrix& g) {
    if (!w.requires_grad()) return;
    Matrix inv_t = lu.inverse().transpose();
    push(w, inv_t * g(0, 0));
  });
}

Tensor inverse(const Tensor& w) {
  if (w.rows() != w.cols()) throw DimensionError("inverse: non-square " + w.shape_str());
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd(w.value()));
  Matrix inv = lu.inverse();
  Matrix saved = inv;
  return unary(w, std::move(inv), [saved](const Matrix& g) -> Matrix {
    return -(saved.transpose() * g * saved.transpose());
  });
}

Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                         std::span<const Index> group_sizes, std::span<const Matrix> masks,
                         Index heads, std::vector<std::vector<Matrix>>* weights) {
  require_same_shape("grouped_attention(q,k)", q, k);
  require_same_shape("grouped_attention(q,v)", q, v);
  if (heads <= 0 || q.cols() % heads != 0) {
    throw DimensionError("grouped_attention: width " + std::to_string(q.cols()) +
                         " not divisible into " + std::to_string(heads) + " heads");
  }
  Index total = 0;
  for (Index n : group_sizes) total += n;
  if (total != q.rows()) {
    throw DimensionError("grouped_attention: groups cover " + std::to_string(total) +
                         " rows, inputs have " + std::to_string(q.rows()));
  }
  if (!masks.empty() && masks.size() != group_sizes.size()) {
    throw DimensionError("grouped_attention: one mask per group required");
  }
  const Index dk = q.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));

  // probs[g * heads + h] holds the softmax weights for backward.
  std::vector<Matrix> probs;
  probs.reserve(group_sizes.size() * static_cast<std::size_t>(heads));
  Matrix out(q.rows(), q.cols());
  if (weights != nullptr) weights->assign(group_sizes.size(), {});
  Index off = 0;
  for (std::size_t gi = 0; gi < group_sizes.size(); ++gi) {
    const Index n = group_sizes[gi];
    for (Index h = 0; h < heads; ++h) {
      auto qh = q.value().block(off, h * dk, n, dk);
      auto kh = k.value().block(off, h * dk, n, dk);
      auto vh = v.value().block(off, h * dk, n, dk);
      Matrix s = (qh * kh.transpose()) * inv_sqrt;
      if (!masks.empty()) {
        const Matrix& m = masks[gi];
        if (m.rows() != n || m.cols() != n) {
          throw DimensionError("grouped_attention: mask " + shape_of(m) + " for group of " +
                               std::to_string(n));
        }
        for (Index i = 0; i < n; ++i)
          for (Index j = 0; j < n; ++j)
            if (is_masked(m(i, j))) s(i, j) = kMaskedOut;
      }
      Matrix p = softmax_rows(s);
      out.block(off, h * dk, n, dk) = p * vh;
      if (weights != nullptr) (*weights)[gi].push_back(p);
      probs.push_back(std::move(p));
    }
    off += n;
  }

  std::vector<Index> sizes(group_sizes.begin(), group_sizes.end());
  return make_result(std::move(out), {&q, &k, &v},
                     [q, k, v, sizes, probs, heads, dk, inv_sqrt](const Matrix& g) {
    Matrix gq = Matrix::Zero(q.rows(), q.cols());
    Matrix gk = Matrix::Zero(k.rows(), k.cols());
    Matrix gv = Matrix::Zero(v.rows(), v.cols());
    Index o = 0;
    std::size_t pi = 0;
    for (Index n : sizes) {
      for (Index h = 0; h < heads; ++h, ++pi) {
        const Matrix& p = probs[pi];
        auto qh = q.value().block(o, h * dk, n, dk);
        auto kh = k.value().block(o, h * dk, n, dk);
        auto vh = v.value().block(o, h * dk, n, dk);
        auto gh = g.block(o, h * dk, n, dk);
        gv.block(o, h * dk, n, dk) = p.transpose() * gh;
        Matrix gs = softmax_backward(p, gh * vh.transpose()) * inv_sqrt;
        gq.block(o, h * dk, n, dk) = gs * kh;
        gk.block(o, h * dk, n, dk) = gs.transpose() * qh;
      }
      o += n;
    }
    push(q, gq);
    push(k, gk);
    push(v, gv);
  });
}

}  // namespace stglow
