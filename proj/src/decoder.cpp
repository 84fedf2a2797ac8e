// SPDX-License-Identifier: Apache-2.0
#include "stglow/decoder.hpp"

#include "stglow/errors.hpp"
#include "stglow/flow.hpp"

namespace stglow {

Matrix trajectory_row(const Matrix& flat, Index r) {
  return Eigen::Map<const Matrix>(flat.row(r).eval().data(), flat.cols() / 2, 2);
}

Matrix flatten_trajectory(const Matrix& traj) {
  const Matrix t = traj;  // row-major copy
  return Eigen::Map<const Matrix>(t.data(), 1, t.size());
}

BidirectionalDecoder::BidirectionalDecoder(const DecoderOptions& opt, Rng& rng)
    : opt_(opt),
      goal_mlp_({opt.behavior_channels, opt.hidden, 2}, rng),
      fwd_init_({opt.behavior_channels, opt.hidden, opt.hidden}, rng),
      fwd_input_({opt.hidden, opt.hidden}, rng, true),
      fwd_gru_(opt.hidden, opt.hidden, rng),
      fwd_out_(opt.hidden + opt.behavior_channels, 2, rng) {
  if (opt.pred_len < 1) throw ConfigError("decoder needs pred_len >= 1");
  if (opt.bidirectional) {
    bwd_init_ = Mlp({opt.behavior_channels, opt.hidden, opt.hidden}, rng);
    bwd_input_ = Mlp({2, opt.hidden}, rng, true);
    bwd_gru_ = GruCell(opt.hidden, opt.hidden, rng);
    bwd_out_ = Linear(opt.hidden + opt.behavior_channels, 2, rng);
    both_out_ = Linear(2 * opt.hidden, 2, rng);
  }
}

DecodedBatch BidirectionalDecoder::operator()(const Tensor& mb) const {
  if (mb.cols() != opt_.behavior_channels) {
    throw DimensionError("decoder expects " + std::to_string(opt_.behavior_channels) +
                         "-wide behaviors, got " + mb.shape_str());
  }
  const Index tp = opt_.pred_len;
  DecodedBatch out;
  out.bidirectional = opt_.bidirectional;
  out.goal = goal_mlp_(mb);

  // Forward rollout: f_i^t = MLP(f_h^t) after each state update.
  std::vector<Tensor> f_inputs;  // f_i^0 .. f_i^tp
  std::vector<Tensor> fwd;
  Tensor f_h = fwd_init_(mb);
  f_inputs.push_back(fwd_input_(f_h));
  for (Index t = 1; t <= tp; ++t) {
    f_h = fwd_gru_(f_inputs.back(), f_h);
    f_inputs.push_back(fwd_input_(f_h));
    fwd.push_back(fwd_out_(concat_cols({f_inputs.back(), mb})));
  }
  out.forward = concat_cols(fwd);
  if (!opt_.bidirectional) return out;

  // Backward rollout from the goal, t_b = tp-1 .. 1.
  Tensor b_h = bwd_init_(mb);
  Tensor b_i = bwd_input_(out.goal);
  std::vector<Tensor> bwd(static_cast<std::size_t>(tp - 1));
  std::vector<Tensor> both(static_cast<std::size_t>(tp));
  both[static_cast<std::size_t>(tp - 1)] = out.goal;
  for (Index t = tp - 1; t >= 1; --t) {
    b_h = bwd_gru_(b_i, b_h);
    bwd[static_cast<std::size_t>(t - 1)] = bwd_out_(concat_cols({b_h, mb}));
    Tensor y_both = both_out_(concat_cols({b_h, f_inputs[static_cast<std::size_t>(t)]}));
    both[static_cast<std::size_t>(t - 1)] = y_both;
    b_i = bwd_input_(y_both);
  }
  out.backward = tp > 1 ? concat_cols(bwd) : Tensor::zeros(mb.rows(), 0);
  out.both = concat_cols(both);
  return out;
}

DecodedFuture BidirectionalDecoder::decode(const Matrix& behavior) const {
  Matrix row = behavior;
  if (row.cols() == 1 && row.rows() == opt_.behavior_channels) row.transposeInPlace();
  if (!row.allFinite()) throw DataError("decode: non-finite behavior vector");
  const DecodedBatch b = (*this)(Tensor(row));
  DecodedFuture f;
  f.goal = b.goal.value().row(0).transpose();
  f.forward = trajectory_row(b.forward.value(), 0);
  if (opt_.bidirectional) {
    f.backward = opt_.pred_len > 1 ? trajectory_row(b.backward.value(), 0) : Matrix(0, 2);
    f.both = trajectory_row(b.both.value(), 0);
  }
  return f;
}

void BidirectionalDecoder::collect(ParameterSet& ps, const std::string& prefix) const {
  goal_mlp_.collect(ps, prefix + ".goal");
  fwd_init_.collect(ps, prefix + ".fwd_init");
  fwd_input_.collect(ps, prefix + ".fwd_input");
  fwd_gru_.collect(ps, prefix + ".fwd_gru");
  fwd_out_.collect(ps, prefix + ".fwd_out");
  if (opt_.bidirectional) {
    bwd_init_.collect(ps, prefix + ".bwd_init");
    bwd_input_.collect(ps, prefix + ".bwd_input");
    bwd_gru_.collect(ps, prefix + ".bwd_gru");
    bwd_out_.collect(ps, prefix + ".bwd_out");
    both_out_.collect(ps, prefix + ".both_out");
  }
}

namespace {

// Σ_t |pred_t - gt_t| per row of flattened trajectories (R x 1).
Tensor summed_distance(const Tensor& pred, const Tensor& gt) {
  const Index r = pred.rows();
  const Index steps = pred.cols() / 2;
  const Tensor d = row_norm(reshape(pred - gt, r * steps, 2));
  return sum_cols(reshape(d, r, steps));
}

}  // namespace

Tensor trajectory_loss(const DecodedBatch& decoded, Index k, const Matrix& gt_future,
                       const Matrix& gt_goal, const LossWeights& w,
                       std::vector<Index>* goal_argmin, std::vector<Index>* traj_argmin) {
  if (k < 1) throw ContractError("trajectory_loss: K must be >= 1");
  const Index rows = decoded.goal.rows();
  if (rows % k != 0 || rows / k != gt_future.rows() || gt_goal.rows() != gt_future.rows()) {
    throw DimensionError("trajectory_loss: " + std::to_string(rows) + " decoded rows for " +
                         std::to_string(gt_future.rows()) + " pedestrians with K=" +
                         std::to_string(k));
  }
  if (gt_future.cols() != decoded.forward.cols() || gt_goal.cols() != 2) {
    throw DimensionError("trajectory_loss: ground truth shape mismatch");
  }
  const Tensor future = repeat_rows(Tensor(gt_future), k);
  const Tensor goal = repeat_rows(Tensor(gt_goal), k);
  const Tensor goal_dist = row_norm(decoded.goal - goal);

  Tensor traj;
  if (decoded.bidirectional) {
    traj = scale(summed_distance(decoded.forward, future), w.forward) +
           scale(summed_distance(decoded.both, future), w.both);
    if (decoded.backward.cols() > 0) {
      const Tensor head = slice_cols(future, 0, decoded.backward.cols());
      traj = traj + scale(summed_distance(decoded.backward, head), w.backward);
    }
  } else {
    traj = scale(summed_distance(decoded.forward, future), w.forward + w.backward + w.both);
  }
  return scale(group_min(goal_dist, k, goal_argmin), w.goal) + group_min(traj, k, traj_argmin);
}

Tensor total_loss(const Tensor& nll, const Tensor& per_pedestrian_traj) {
  return nll + sum(per_pedestrian_traj);
}

}  // namespace stglow
