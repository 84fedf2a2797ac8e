// SPDX-License-Identifier: Apache-2.0
#pragma once

// Conditional normalizing flow over motion-behavior vectors. Each step of
// flow is pattern normalization -> invertible linear map -> affine coupling
// conditioned on the social-interaction vector. The forward direction maps
// a behavior to the base space; reverse maps base samples back.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "stglow/layers.hpp"
#include "stglow/tensor.hpp"

namespace stglow {

struct FlowOutput {
  Tensor out;
  Tensor logdet;  // B x 1, log|det d(out)/d(in)| per sample
};

// Per-channel affine normalization y = s ⊙ x + b with data-dependent
// initialization; afterwards s and b train like any other parameter.
class PatternNorm {
 public:
  PatternNorm() = default;
  explicit PatternNorm(Index channels);

  // Sets s = 1/std and b = -mean/std per channel over the sample axis
  // (population statistics). Throws ContractError if already initialized or
  // the batch has fewer than two rows, DegenerateChannelError if a channel's
  // std is below 1e-8.
  void initialize(const Matrix& batch);
  bool initialized() const { return initialized_; }
  void mark_initialized(bool v) { initialized_ = v; }

  FlowOutput forward(const Tensor& x) const;
  Tensor reverse(const Tensor& y) const;
  // Σ_c log|s_c|, 1 x 1.
  Tensor logdet() const;

  Tensor& scale() { return scale_; }
  Tensor& bias() { return bias_; }
  const Tensor& scale() const { return scale_; }
  const Tensor& bias() const { return bias_; }
  void collect(ParameterSet& ps, const std::string& prefix) const;

 private:
  void require_initialized() const;
  Tensor scale_;  // 1 x C
  Tensor bias_;   // 1 x C
  bool initialized_ = false;
};

// y = x Wᵀ with W (C x C) initialized to a random rotation (det +1).
class InvertibleLinear {
 public:
  static constexpr double kMinAbsDet = 1e-12;

  InvertibleLinear() = default;
  InvertibleLinear(Index channels, Rng& rng);

  // Throws SingularityError when |det W| < kMinAbsDet.
  FlowOutput forward(const Tensor& x) const;
  Tensor reverse(const Tensor& y) const;

  Tensor& weight() { return weight_; }
  const Tensor& weight() const { return weight_; }
  void collect(ParameterSet& ps, const std::string& prefix) const;

 private:
  Tensor weight_;
};

// Random C x C rotation: Q of a QR factorization of a Gaussian draw, with a
// column sign flipped when needed so that det Q = +1.
Matrix random_rotation(Index channels, Rng& rng);

// (x_a, x_b) = split(x); (log s, t) = net(concat(x_a, st));
// y = concat(x_a, exp(clamp(log s)) ⊙ x_b + t). The final layer of net is
// zero-initialized so a fresh coupling is the identity.
class AffineCoupling {
 public:
  AffineCoupling() = default;
  AffineCoupling(Index channels, Index cond_width, Index hidden, double log_scale_clamp, Rng& rng);

  FlowOutput forward(const Tensor& x, const Tensor& st) const;
  Tensor reverse(const Tensor& y, const Tensor& st) const;

  // Clamped log-scale and shift for a given first half.
  std::pair<Tensor, Tensor> scale_shift(const Tensor& xa, const Tensor& st) const;

  Index channels() const { return channels_; }
  Mlp& net() { return net_; }
  void collect(ParameterSet& ps, const std::string& prefix) const;

 private:
  Index channels_ = 0;
  Index cond_width_ = 0;
  double clamp_ = 5.0;
  Mlp net_;
};

struct FlowStep {
  std::optional<PatternNorm> norm;
  InvertibleLinear linear;
  AffineCoupling coupling;
  // Channels moved straight to the base density after this step.
  Index factor_out = 0;
};

struct FlowOptions {
  Index channels = 256;
  Index steps = 16;
  Index cond_width = 256;
  Index hidden = 256;
  bool use_pn = true;
  bool factor_out = false;
  Index factor_channels = 64;
  Index factor_every = 4;
  double log_scale_clamp = 5.0;
};

class FlowStack {
 public:
  FlowStack(const FlowOptions& opt, Rng& rng);

  // Data-dependent initialization of every pattern normalization, in chain
  // order, on `behaviors` (B x C) conditioned on `st`.
  void initialize(const Matrix& behaviors, const Matrix& st);
  bool initialized() const;

  // z and the per-sample total log-det. `step_logdets`, when given,
  // receives one B x 1 log-det per step. Errors from a step are rethrown
  // with the step index in the message.
  FlowOutput forward(const Tensor& x, const Tensor& st,
                     std::vector<Tensor>* step_logdets = nullptr) const;
  Tensor reverse(const Tensor& z, const Tensor& st) const;

  const FlowOptions& options() const { return opt_; }
  Index channels() const { return opt_.channels; }
  std::vector<FlowStep>& steps() { return steps_; }
  const std::vector<FlowStep>& steps() const { return steps_; }
  void collect(ParameterSet& ps, const std::string& prefix) const;

 private:
  FlowOptions opt_;
  std::vector<FlowStep> steps_;
};

// Isotropic Gaussian N(0, σ² I) over `dim` channels.
struct BaseDensity {
  Index dim = 0;
  double sigma = 1.0;

  // log p(z) = -zᵀz / (2σ²) - (dim/2) log(2πσ²), per row (B x 1).
  Tensor log_prob(const Tensor& z) const;
};

// Mean negative log-likelihood of the behaviors under the flow, in nats:
//   -(1/B) Σ_b [log p(z_b) + logdet_b].
Tensor nll_loss(const Tensor& behaviors, const Tensor& st, const FlowStack& stack,
                double sigma = 1.0);

// z ~ N(0, σ² I) for K samples of each of B conditioning rows. Row b*K + k
// is drawn from its own stream keyed by (seed, stream_ids[b], k), so the
// result does not depend on how the work is partitioned.
Matrix draw_base_samples(std::span<const std::uint64_t> stream_ids, Index k, Index dim,
                         double sigma, std::uint64_t seed);

// Behaviors MB' = reverse(z, ST) for K samples per row of `st`; output is
// (B*K) x C with row b*K + k.
Tensor sample_behaviors(const Tensor& st, const FlowStack& stack, Index k, double sigma,
                        std::uint64_t seed, std::span<const std::uint64_t> stream_ids);

// Rows of `x` each repeated k times consecutively.
Tensor repeat_rows(const Tensor& x, Index k);

}  // namespace stglow
