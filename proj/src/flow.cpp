// SPDX-License-Identifier: Apache-2.0
#include "stglow/flow.hpp"

#include <Eigen/LU>
#include <Eigen/QR>

#include <cmath>
#include <numbers>

#include "stglow/errors.hpp"
#include "stglow/random.hpp"

namespace stglow {

namespace {

// Broadcast a 1 x 1 log-det to every row of a batch, keeping the gradient.
Tensor per_sample(const Tensor& scalar, Index batch) {
  return matmul(Tensor::constant(batch, 1, 1.0), scalar);
}

}  // namespace

PatternNorm::PatternNorm(Index channels)
    : scale_(Tensor::parameter(Matrix::Ones(1, channels))),
      bias_(Tensor::parameter(Matrix::Zero(1, channels))) {}

void PatternNorm::initialize(const Matrix& batch) {
  if (initialized_) throw ContractError("pattern normalization already initialized");
  if (batch.rows() < 2) throw ContractError("pattern normalization init needs at least 2 samples");
  if (batch.cols() != scale_.cols()) {
    throw DimensionError("pattern normalization init: batch has " + std::to_string(batch.cols()) +
                         " channels, expected " + std::to_string(scale_.cols()));
  }
  const Eigen::RowVectorXd mu = batch.colwise().mean();
  const Eigen::RowVectorXd sd =
      ((batch.rowwise() - mu).array().square().colwise().sum() / static_cast<double>(batch.rows()))
          .sqrt();
  for (Index c = 0; c < sd.size(); ++c) {
    if (!(sd(c) >= 1e-8)) {
      throw DegenerateChannelError("pattern normalization: channel " + std::to_string(c) +
                                   " has std " + std::to_string(sd(c)));
    }
  }
  scale_.mutable_value().row(0) = sd.cwiseInverse();
  bias_.mutable_value().row(0) = -mu.cwiseQuotient(sd);
  initialized_ = true;
}

void PatternNorm::require_initialized() const {
  if (!initialized_) throw ContractError("pattern normalization used before initialization");
}

Tensor PatternNorm::logdet() const { return sum(log_abs(scale_)); }

FlowOutput PatternNorm::forward(const Tensor& x) const {
  require_initialized();
  return {add_row(mul_row(x, scale_), bias_), per_sample(logdet(), x.rows())};
}

Tensor PatternNorm::reverse(const Tensor& y) const {
  require_initialized();
  return mul_row(add_row(y, -bias_), reciprocal(scale_));
}

void PatternNorm::collect(ParameterSet& ps, const std::string& prefix) const {
  ps.add(prefix + ".scale", scale_);
  ps.add(prefix + ".bias", bias_);
}

Matrix random_rotation(Index channels, Rng& rng) {
  const Eigen::MatrixXd a = randn(channels, channels, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  if (q.determinant() < 0.0) q.col(0) *= -1.0;
  return q;
}

InvertibleLinear::InvertibleLinear(Index channels, Rng& rng)
    : weight_(Tensor::parameter(random_rotation(channels, rng))) {}

FlowOutput InvertibleLinear::forward(const Tensor& x) const {
  const Tensor lad = logabsdet(weight_, kMinAbsDet);
  return {matmul(x, transpose(weight_)), per_sample(lad, x.rows())};
}

Tensor InvertibleLinear::reverse(const Tensor& y) const {
  logabsdet(weight_.detach(), kMinAbsDet);  // singularity check
  return matmul(y, transpose(inverse(weight_)));
}

void InvertibleLinear::collect(ParameterSet& ps, const std::string& prefix) const {
  ps.add(prefix + ".weight", weight_);
}

AffineCoupling::AffineCoupling(Index channels, Index cond_width, Index hidden,
                               double log_scale_clamp, Rng& rng)
    : channels_(channels), cond_width_(cond_width), clamp_(log_scale_clamp) {
  if (channels < 2 || channels % 2 != 0) {
    throw ConfigError("affine coupling needs an even channel count, got " +
                      std::to_string(channels));
  }
  net_ = Mlp({channels / 2 + cond_width, hidden, hidden, channels}, rng, false, Init::kZero);
}

std::pair<Tensor, Tensor> AffineCoupling::scale_shift(const Tensor& xa, const Tensor& st) const {
  const Index half = channels_ / 2;
  const Tensor h = net_(concat_cols({xa, st}));
  return {clamp(slice_cols(h, 0, half), -clamp_, clamp_), slice_cols(h, half, half)};
}

FlowOutput AffineCoupling::forward(const Tensor& x, const Tensor& st) const {
  if (x.cols() != channels_) {
    throw DimensionError("affine coupling expects " + std::to_string(channels_) +
                         " channels, got " + x.shape_str());
  }
  const Index half = channels_ / 2;
  const Tensor xa = slice_cols(x, 0, half);
  const Tensor xb = slice_cols(x, half, half);
  const auto [log_s, t] = scale_shift(xa, st);
  return {concat_cols({xa, mul(exp(log_s), xb) + t}), sum_cols(log_s)};
}

Tensor AffineCoupling::reverse(const Tensor& y, const Tensor& st) const {
  if (y.cols() != channels_) {
    throw DimensionError("affine coupling expects " + std::to_string(channels_) +
                         " channels, got " + y.shape_str());
  }
  const Index half = channels_ / 2;
  const Tensor ya = slice_cols(y, 0, half);
  const Tensor yb = slice_cols(y, half, half);
  const auto [log_s, t] = scale_shift(ya, st);
  return concat_cols({ya, mul(yb - t, exp(-log_s))});
}

void AffineCoupling::collect(ParameterSet& ps, const std::string& prefix) const {
  net_.collect(ps, prefix + ".net");
}

FlowStack::FlowStack(const FlowOptions& opt, Rng& rng) : opt_(opt) {
  if (opt.steps < 1) throw ConfigError("flow needs at least one step");
  Index width = opt.channels;
  for (Index j = 0; j < opt.steps; ++j) {
    FlowStep step;
    if (opt.use_pn) step.norm.emplace(width);
    step.linear = InvertibleLinear(width, rng);
    step.coupling = AffineCoupling(width, opt.cond_width, opt.hidden, opt.log_scale_clamp, rng);
    const bool boundary = opt.factor_out && (j + 1) % opt.factor_every == 0 && j + 1 < opt.steps;
    if (boundary) {
      if (width - opt.factor_channels < 2) {
        throw ConfigError("factor-out schedule leaves fewer than 2 active channels");
      }
      step.factor_out = opt.factor_channels;
      width -= opt.factor_channels;
    }
    steps_.push_back(std::move(step));
  }
}

bool FlowStack::initialized() const {
  for (const auto& s : steps_) {
    if (s.norm && !s.norm->initialized()) return false;
  }
  return true;
}

void FlowStack::initialize(const Matrix& behaviors, const Matrix& st) {
  Tensor h(behaviors);
  const Tensor cond(st);
  for (auto& s : steps_) {
    if (s.norm) {
      if (!s.norm->initialized()) s.norm->initialize(h.value());
      h = s.norm->forward(h).out;
    }
    h = s.linear.forward(h).out;
    h = s.coupling.forward(h, cond).out;
    if (s.factor_out > 0) h = slice_cols(h, 0, h.cols() - s.factor_out);
  }
}

FlowOutput FlowStack::forward(const Tensor& x, const Tensor& st,
                              std::vector<Tensor>* step_logdets) const {
  if (x.cols() != opt_.channels) {
    throw DimensionError("flow expects " + std::to_string(opt_.channels) + " channels, got " +
                         x.shape_str());
  }
  if (st.rows() != x.rows()) {
    throw DimensionError("flow: conditioning rows " + st.shape_str() + " do not match " +
                         x.shape_str());
  }
  Tensor h = x;
  Tensor total = Tensor::zeros(x.rows(), 1);
  std::vector<Tensor> factored;
  for (std::size_t j = 0; j < steps_.size(); ++j) {
    const FlowStep& s = steps_[j];
    try {
      Tensor ld = Tensor::zeros(x.rows(), 1);
      if (s.norm) {
        FlowOutput r = s.norm->forward(h);
        h = r.out;
        ld = ld + r.logdet;
      }
      FlowOutput l = s.linear.forward(h);
      FlowOutput c = s.coupling.forward(l.out, st);
      h = c.out;
      ld = ld + l.logdet + c.logdet;
      if (step_logdets != nullptr) step_logdets->push_back(ld);
      total = total + ld;
      if (s.factor_out > 0) {
        factored.push_back(slice_cols(h, h.cols() - s.factor_out, s.factor_out));
        h = slice_cols(h, 0, h.cols() - s.factor_out);
      }
    } catch (const SingularityError& e) {
      throw SingularityError("flow step " + std::to_string(j) + ": " + e.what());
    } catch (const NumericError& e) {
      throw NumericError("flow step " + std::to_string(j) + ": " + e.what());
    }
  }
  if (factored.empty()) return {h, total};
  std::vector<Tensor> parts{h};
  for (auto it = factored.rbegin(); it != factored.rend(); ++it) parts.push_back(*it);
  return {concat_cols(parts), total};
}

Tensor FlowStack::reverse(const Tensor& z, const Tensor& st) const {
  if (z.cols() != opt_.channels) {
    throw DimensionError("flow expects " + std::to_string(opt_.channels) + " channels, got " +
                         z.shape_str());
  }
  Index active = opt_.channels;
  for (const auto& s : steps_) active -= s.factor_out;
  Tensor h = slice_cols(z, 0, active);
  Index cursor = active;
  for (std::size_t jj = steps_.size(); jj-- > 0;) {
    const FlowStep& s = steps_[jj];
    try {
      if (s.factor_out > 0) {
        h = concat_cols({h, slice_cols(z, cursor, s.factor_out)});
        cursor += s.factor_out;
      }
      h = s.coupling.reverse(h, st);
      h = s.linear.reverse(h);
      if (s.norm) h = s.norm->reverse(h);
    } catch (const SingularityError& e) {
      throw SingularityError("flow step " + std::to_string(jj) + ": " + e.what());
    } catch (const NumericError& e) {
      throw NumericError("flow step " + std::to_string(jj) + ": " + e.what());
    }
  }
  return h;
}

void FlowStack::collect(ParameterSet& ps, const std::string& prefix) const {
  for (std::size_t j = 0; j < steps_.size(); ++j) {
    const std::string p = prefix + ".step" + std::to_string(j);
    if (steps_[j].norm) steps_[j].norm->collect(ps, p + ".pn");
    steps_[j].linear.collect(ps, p + ".linear");
    steps_[j].coupling.collect(ps, p + ".coupling");
  }
}

Tensor BaseDensity::log_prob(const Tensor& z) const {
  if (z.cols() != dim) {
    throw DimensionError("base density of dim " + std::to_string(dim) + " given " + z.shape_str());
  }
  const double var = sigma * sigma;
  const double constant =
      -0.5 * static_cast<double>(dim) * std::log(2.0 * std::numbers::pi * var);
  return add_scalar(scale(sum_cols(square(z)), -0.5 / var), constant);
}

Tensor nll_loss(const Tensor& behaviors, const Tensor& st, const FlowStack& stack, double sigma) {
  const FlowOutput f = stack.forward(behaviors, st);
  const BaseDensity base{stack.channels(), sigma};
  try {
    return -mean(base.log_prob(f.out) + f.logdet);
  } catch (const NumericError& e) {
    throw NumericError(std::string("negative log-likelihood: ") + e.what());
  }
}

Matrix draw_base_samples(std::span<const std::uint64_t> stream_ids, Index k, Index dim,
                         double sigma, std::uint64_t seed) {
  if (k < 1) throw ContractError("sample count K must be >= 1");
  const Index b = static_cast<Index>(stream_ids.size());
  Matrix z(b * k, dim);
  for (Index i = 0; i < b; ++i) {
    for (Index s = 0; s < k; ++s) {
      Rng rng(stream_seed(seed, stream_ids[static_cast<std::size_t>(i)], static_cast<std::uint64_t>(s)));
      z.row(i * k + s) = randn(1, dim, rng, 1.0).row(0) * sigma;
    }
  }
  return z;
}

Tensor repeat_rows(const Tensor& x, Index k) {
  std::vector<Index> idx(static_cast<std::size_t>(x.rows() * k));
  for (Index i = 0; i < x.rows(); ++i)
    for (Index s = 0; s < k; ++s) idx[static_cast<std::size_t>(i * k + s)] = i;
  return gather_rows(x, idx);
}

Tensor sample_behaviors(const Tensor& st, const FlowStack& stack, Index k, double sigma,
                        std::uint64_t seed, std::span<const std::uint64_t> stream_ids) {
  if (static_cast<Index>(stream_ids.size()) != st.rows()) {
    throw DimensionError("sample_behaviors: one stream id per conditioning row required");
  }
  const Tensor z(draw_base_samples(stream_ids, k, stack.channels(), sigma, seed));
  return stack.reverse(z, repeat_rows(st, k));
}

}  // namespace stglow
