// SPDX-License-Identifier: Apache-2.0
#pragma once

// Goal-conditioned bidirectional decoder: turns an evolved motion behavior
// into a goal, a forward rollout, a backward rollout seeded by the goal,
// and a bidirectional trajectory fusing the two.

#include <Eigen/Core>

#include <vector>

#include "stglow/layers.hpp"
#include "stglow/tensor.hpp"

namespace stglow {

struct DecoderOptions {
  Index behavior_channels = 256;  // C
  Index hidden = 256;             // D_h
  Index pred_len = 12;            // t_p
  bool bidirectional = true;
};

struct LossWeights {
  double goal = 1.0;      // alpha
  double forward = 0.25;  // lambda_1
  double backward = 0.25; // lambda_2
  double both = 0.5;      // lambda_3
};

// Batched decoder output, one row per behavior. Trajectories are flattened
// row-wise as (x_1, y_1, x_2, y_2, ...) in time order.
struct DecodedBatch {
  Tensor goal;      // R x 2
  Tensor forward;   // R x 2 t_p
  Tensor backward;  // R x 2 (t_p - 1), steps 1 .. t_p-1
  Tensor both;      // R x 2 t_p, step t_p is the goal
  bool bidirectional = true;

  // The trajectory reported to metrics.
  const Tensor& prediction() const { return bidirectional ? both : forward; }
};

struct DecodedFuture {
  Eigen::Vector2d goal;
  Matrix forward;   // t_p x 2
  Matrix backward;  // (t_p - 1) x 2, time order
  Matrix both;      // t_p x 2
};

// Unflattens row `r` of a flattened trajectory tensor into steps x 2.
Matrix trajectory_row(const Matrix& flat, Index r);
// Flattens steps x 2 into 1 x 2 steps.
Matrix flatten_trajectory(const Matrix& traj);

class BidirectionalDecoder {
 public:
  BidirectionalDecoder(const DecoderOptions& opt, Rng& rng);

  DecodedBatch operator()(const Tensor& behaviors) const;
  // Single behavior vector (1 x C or C x 1).
  DecodedFuture decode(const Matrix& behavior) const;

  const DecoderOptions& options() const { return opt_; }
  Mlp& goal_head() { return goal_mlp_; }
  void collect(ParameterSet& ps, const std::string& prefix) const;

 private:
  DecoderOptions opt_;
  Mlp goal_mlp_;
  Mlp fwd_init_;
  Mlp fwd_input_;
  GruCell fwd_gru_;
  Linear fwd_out_;
  Mlp bwd_init_;
  Mlp bwd_input_;
  GruCell bwd_gru_;
  Linear bwd_out_;
  Linear both_out_;
};

// Per-pedestrian L_traj (B x 1) for B pedestrians with K consecutive rows
// each in `decoded`:
//   alpha * min_k |G - G_k| + min_k Σ_t (l1 |Y - F_k| + l2 |Y - B_k| + l3 |Y - Both_k|)
// gt_future is B x 2 t_p (flattened), gt_goal B x 2. The two minima are
// independent; ties resolve to the lowest k. With a forward-only decoder the
// trajectory term is (l1 + l2 + l3) |Y - F_k|.
Tensor trajectory_loss(const DecodedBatch& decoded, Index k, const Matrix& gt_future,
                       const Matrix& gt_goal, const LossWeights& weights,
                       std::vector<Index>* goal_argmin = nullptr,
                       std::vector<Index>* traj_argmin = nullptr);

// L_total = L_p + Σ_i L_traj,i
Tensor total_loss(const Tensor& nll, const Tensor& per_pedestrian_traj);

}  // namespace stglow
