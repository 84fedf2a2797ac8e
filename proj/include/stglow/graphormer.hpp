// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dual graphormer encoder: a temporal graphormer over the time steps of one
// trajectory and a spatial graphormer over the pedestrians of one snapshot.
// Together they yield the motion-behavior (MB) and social-interaction (ST)
// vectors consumed by the flow.

#include <Eigen/Core>

#include <memory>
#include <span>
#include <vector>

#include "stglow/layers.hpp"
#include "stglow/tensor.hpp"

namespace stglow {

// Causal adjacency over T steps: adjacency(i, j) == 1 iff i >= j, else
// kMaskedOut.
struct TemporalGraph {
  Index steps = 0;
  Matrix adjacency;
};

TemporalGraph build_temporal_adjacency(Index steps);

// Number of nodes that attend to node t (0-based), i.e. the count of
// unmasked entries in column t. Equals steps - t.
Index centrality_degree(const TemporalGraph& graph, Index t);

// Field-of-view adjacency for one snapshot of N pedestrians.
// adjacency(i, j) == 1 iff rel_x(i,j) * dir_i.x >= 0 and rel_y(i,j) * dir_i.y >= 0,
// where rel(i, j) = position_j - position_i is j relative to i.
struct SpatialGraph {
  Matrix adjacency;  // N x N, {1, kMaskedOut}
  Matrix walk_dirs;  // N x 2, now - prev
  Matrix rel_x;      // N x N
  Matrix rel_y;      // N x N
};

SpatialGraph build_spatial_adjacency(const Matrix& positions_prev, const Matrix& positions_now);

// Cosine of the angle between two walking directions; 0 when either
// direction has norm <= eps (stationary pedestrian). Always in [-1, 1].
double steering_cosine(const Eigen::Vector2d& dir_i, const Eigen::Vector2d& dir_j,
                       double eps = 1e-9);

// Displacement between the last two rows of a trajectory; zero for a
// single-row trajectory.
Eigen::Vector2d last_walking_direction(const Matrix& trajectory);

// Post-softmax attention weights, [group][head].
using AttentionTrace = std::vector<std::vector<Matrix>>;

struct TemporalOptions {
  Index width = 256;
  Index heads = 4;
  Index max_steps = 20;
  bool use_centrality = true;
  bool use_positional = true;
  bool use_mask = true;
};

// Encodes stacked trajectories of equal length into per-step embeddings.
class TemporalEncoder {
 public:
  virtual ~TemporalEncoder() = default;
  // trajs: (M * steps) x 2, trajectory m occupying rows [m*steps, (m+1)*steps).
  // Returns (M * steps) x width.
  virtual Tensor operator()(const Tensor& trajs, Index steps,
                            AttentionTrace* trace = nullptr) const = 0;
  virtual void collect(ParameterSet& ps, const std::string& prefix) const = 0;
  virtual Index width() const = 0;
};

class TemporalGraphormer final : public TemporalEncoder {
 public:
  TemporalGraphormer(const TemporalOptions& opt, Rng& rng);

  Tensor operator()(const Tensor& trajs, Index steps,
                    AttentionTrace* trace = nullptr) const override;
  void collect(ParameterSet& ps, const std::string& prefix) const override;
  Index width() const override { return opt_.width; }

  // Node embedding before attention: MLP(x) + centrality + positional.
  Tensor node_embedding(const Tensor& trajs, Index steps) const;
  // Centrality embedding rows for a graph of `steps` nodes (steps x width).
  Tensor centrality_embedding(Index steps) const;
  const TransformerBlock& block() const { return block_; }

 private:
  TemporalOptions opt_;
  Mlp node_mlp_;
  Linear centrality_;
  Tensor positional_;  // max_steps x width
  TransformerBlock block_;
};

// Ablation stand-in for the temporal graphormer: MLP embedding followed by
// a GRU over time.
class GruTemporalEncoder final : public TemporalEncoder {
 public:
  GruTemporalEncoder(Index width, Rng& rng);

  Tensor operator()(const Tensor& trajs, Index steps,
                    AttentionTrace* trace = nullptr) const override;
  void collect(ParameterSet& ps, const std::string& prefix) const override;
  Index width() const override { return width_; }

 private:
  Index width_;
  Mlp embed_;
  GruCell cell_;
};

struct SpatialOptions {
  Index width = 256;
  Index heads = 4;
  bool use_position = true;
  bool use_steering = true;
  bool use_fov_mask = true;
};

// One pedestrian snapshot seen from a target: positions at the previous and
// current step (N x 2 each) plus the target's row index.
struct SpatialGroup {
  Matrix prev;
  Matrix now;
  Index target = 0;
};

class SpatialGraphormer {
 public:
  SpatialGraphormer() = default;
  SpatialGraphormer(const SpatialOptions& opt, Rng& rng);

  // temporal: (sum N) x width temporal embeddings at the current step, rows
  // ordered as the groups. Node j of a group is R_j + S_j + TH_j where R and
  // S embed j's position and steering relative to the group's target.
  // Returns (sum N) x width.
  Tensor operator()(std::span<const SpatialGroup> groups, const Tensor& temporal,
                    AttentionTrace* trace = nullptr) const;
  void collect(ParameterSet& ps, const std::string& prefix) const;

 private:
  SpatialOptions opt_;
  Mlp position_mlp_;
  Mlp steering_mlp_;
  TransformerBlock block_;
};

struct EncoderOptions {
  TemporalOptions temporal;
  SpatialOptions spatial;
  bool use_spatial = true;
  bool gru_temporal = false;
  Index behavior_channels = 256;  // C; a projection is added when != width
  Index obs_len = 8;
  Index pred_len = 12;
};

// One target pedestrian in a scene. Positions are in meters; the encoder
// translates everything so the target's last observed position is the
// origin.
struct EncodeInput {
  std::vector<Matrix> obs;  // N entries of obs_len x 2
  Matrix future;            // pred_len x 2 for the target, empty at inference
  Index target = 0;
};

struct EncodedBatch {
  Tensor st;         // B x width
  Tensor mb;         // B x C, only when futures were supplied
  Tensor th_target;  // B x width
  Tensor sh_target;  // B x width
  bool has_behavior = false;
};

// Per-pedestrian encoding of a whole scene (each pedestrian as target).
struct EncodedScene {
  std::vector<Matrix> th;  // N entries of obs_len x width (history encoder)
  Matrix th_target;        // N x width, last observed step
  Matrix sh;               // N x width
  Matrix st;               // N x width
  Matrix mb;               // N x C, empty at inference
};

class DualGraphormer {
 public:
  DualGraphormer(const EncoderOptions& opt, Rng& rng);

  // Throws ContractError when `require_behavior` is set and an input lacks a
  // future, and DataError on non-finite positions.
  EncodedBatch encode(std::span<const EncodeInput> inputs, bool require_behavior) const;
  EncodedScene encode_scene(const std::vector<Matrix>& obs,
                            const std::vector<Matrix>* future) const;

  void collect(ParameterSet& ps, const std::string& prefix) const;
  const EncoderOptions& options() const { return opt_; }
  const TemporalEncoder& behavior_encoder() const { return *tg_full_; }
  const TemporalEncoder& history_encoder() const { return *tg_hist_; }
  const TemporalEncoder& target_encoder() const { return *tg_target_; }
  const SpatialGraphormer& spatial() const { return sg_; }
  bool has_projection() const { return has_projection_; }
  const Linear& projection() const { return projection_; }

 private:
  EncoderOptions opt_;
  std::unique_ptr<TemporalEncoder> tg_full_;
  std::unique_ptr<TemporalEncoder> tg_hist_;
  std::unique_ptr<TemporalEncoder> tg_target_;
  SpatialGraphormer sg_;
  Linear projection_;
  bool has_projection_ = false;
};

// Rows {m*steps + steps-1} of a stacked (M*steps) x D tensor.
Tensor last_steps(const Tensor& stacked, Index steps);

}  // namespace stglow
