// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense 2-D tensors backed by Eigen with define-by-run reverse-mode
// differentiation. A Tape records every operation whose inputs require
// gradients while it is active on the current thread (see TapeScope).
// Without an active tape, operations only compute values.

#include <Eigen/Core>

#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace stglow {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Sentinel for a masked-out attention score. It is finite so it never
// poisons arithmetic; softmax_lastdim maps it to an exact zero weight.
inline constexpr double kMaskedOut = std::numeric_limits<double>::lowest();

inline bool is_masked(double v) { return v == kMaskedOut || v == -std::numeric_limits<double>::infinity(); }

namespace detail {
struct Node {
  Matrix value;
  Matrix grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool leaf = true;
  std::function<void(const Matrix&)> backprop;

  void accumulate(const Matrix& g);
};
}  // namespace detail

class Tensor {
 public:
  Tensor();
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor zeros(Index rows, Index cols);
  static Tensor constant(Index rows, Index cols, double v);
  static Tensor scalar(double v);
  // A trainable leaf. Its gradient accumulates across backward passes
  // until zero_grad().
  static Tensor parameter(Matrix value);

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }
  std::string shape_str() const;

  const Matrix& value() const { return node_->value; }
  // Direct write access for initialization and optimizer updates only.
  Matrix& mutable_value() { return node_->value; }
  double item() const;
  double operator()(Index r, Index c) const { return node_->value(r, c); }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  bool has_grad() const { return node_->grad.size() != 0; }
  // Gradient, or zeros of the value's shape when none has arrived.
  Matrix grad() const;
  void zero_grad() { node_->grad.resize(0, 0); }

  // Same value, no gradient history.
  Tensor detach() const { return Tensor(node_->value); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  friend Tensor make_result(Matrix, bool, std::function<void(const Matrix&)>);
  std::shared_ptr<detail::Node> node_;
};

// Append-only record of differentiable operations.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::shared_ptr<detail::Node> n) { nodes_.push_back(std::move(n)); }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and visits every recorded node once in reverse
  // append order. Throws ContractError for a non-scalar or detached loss.
  void backward(const Tensor& loss);

  // Number of node visits performed by the last backward() call.
  std::size_t last_visit_count() const { return visits_; }

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  std::size_t visits_ = 0;
};

// Makes a tape active on the calling thread for the scope's lifetime.
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

// Convenience: backward on the active tape.
void backward(const Tensor& loss);

// Builds an op result. Records a node when a tape is active and any input
// requires a gradient; `backprop` receives d(loss)/d(result). Throws
// NumericError if `value` contains NaN or Inf.
Tensor make_result(Matrix value, std::initializer_list<const Tensor*> inputs,
                   std::function<void(const Matrix&)> backprop);
Tensor make_result(Matrix value, bool needs_grad, std::function<void(const Matrix&)> backprop);

// ---------------------------------------------------------------------------
// Operations. Shapes are (rows x cols); mismatches raise DimensionError.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

// a (r x c) + row (1 x c), broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
// a (r x c) * row (1 x c), broadcast over rows.
Tensor mul_row(const Tensor& a, const Tensor& row);

Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor log_abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor reciprocal(const Tensor& a);
// Gradient is zero outside [lo, hi].
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum(const Tensor& a);       // 1 x 1
Tensor mean(const Tensor& a);      // 1 x 1
Tensor sum_cols(const Tensor& a);  // r x 1, sums each row
Tensor sum_rows(const Tensor& a);  // 1 x c, sums each column
// Euclidean norm of each row, r x 1. The subgradient at a zero row is zero.
Tensor row_norm(const Tensor& a);

Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_cols(std::initializer_list<Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_rows(std::initializer_list<Tensor> parts);
Tensor slice_cols(const Tensor& a, Index start, Index count);
Tensor slice_rows(const Tensor& a, Index start, Index count);
// out.row(i) = a.row(index[i]); backward scatter-adds.
Tensor gather_rows(const Tensor& a, std::span<const Index> index);
// Row-major reshape.
Tensor reshape(const Tensor& a, Index rows, Index cols);

// Softmax over each row. Entries equal to kMaskedOut (or -inf) produce an
// exact 0. A row with every entry masked raises DegenerateMaskError.
Tensor softmax_lastdim(const Tensor& x);

// Per consecutive group of `group` rows of a column vector, the minimum
// value. Gradient flows to the arg-min only; ties go to the lowest index.
Tensor group_min(const Tensor& values, Index group, std::vector<Index>* argmin = nullptr);

// log|det W| via LU with partial pivoting; gradient W^{-T}.
// Throws SingularityError when |det W| < min_abs_det.
Tensor logabsdet(const Tensor& w, double min_abs_det = 1e-12);
Tensor inverse(const Tensor& w);

// Scaled dot-product attention evaluated independently on consecutive row
// groups. q, k, v are (R x D) with R the sum of `group_sizes`; the columns
// are split into `heads` equal heads. masks[g] is a (n_g x n_g) matrix with
// entries 1 (attend) or kMaskedOut; masked scores are replaced, not
// multiplied. An empty mask vector means no masking. When `weights` is
// non-null it receives the post-softmax weights, indexed [group][head].
Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                         std::span<const Index> group_sizes, std::span<const Matrix> masks,
                         Index heads, std::vector<std::vector<Matrix>>* weights = nullptr);

}  // namespace stglow
