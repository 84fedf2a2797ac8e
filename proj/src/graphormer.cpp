// SPDX-License-Identifier: Apache-2.0
#include "stglow/graphormer.hpp"

#include <algorithm>
#include <cmath>

#include "stglow/errors.hpp"

namespace stglow {

TemporalGraph build_temporal_adjacency(Index steps) {
  if (steps <= 0) throw ContractError("temporal graph needs at least one step");
  TemporalGraph g;
  g.steps = steps;
  g.adjacency = Matrix::Constant(steps, steps, kMaskedOut);
  for (Index i = 0; i < steps; ++i)
    for (Index j = 0; j <= i; ++j) g.adjacency(i, j) = 1.0;
  return g;
}

Index centrality_degree(const TemporalGraph& graph, Index t) {
  Index deg = 0;
  for (Index i = 0; i < graph.steps; ++i) {
    if (!is_masked(graph.adjacency(i, t))) ++deg;
  }
  return deg;
}

SpatialGraph build_spatial_adjacency(const Matrix& positions_prev, const Matrix& positions_now) {
  if (positions_now.rows() < 1 || positions_now.cols() != 2 ||
      positions_prev.rows() != positions_now.rows() || positions_prev.cols() != 2) {
    throw DimensionError("spatial graph expects two N x 2 snapshots of the same pedestrians");
  }
  const Index n = positions_now.rows();
  SpatialGraph g;
  g.walk_dirs = positions_now - positions_prev;
  g.rel_x.resize(n, n);
  g.rel_y.resize(n, n);
  g.adjacency.resize(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      g.rel_x(i, j) = positions_now(j, 0) - positions_now(i, 0);
      g.rel_y(i, j) = positions_now(j, 1) - positions_now(i, 1);
      const bool visible = g.rel_x(i, j) * g.walk_dirs(i, 0) >= 0.0 &&
                           g.rel_y(i, j) * g.walk_dirs(i, 1) >= 0.0;
      g.adjacency(i, j) = visible ? 1.0 : kMaskedOut;
    }
  }
  return g;
}

double steering_cosine(const Eigen::Vector2d& dir_i, const Eigen::Vector2d& dir_j, double eps) {
  const double ni = dir_i.norm();
  const double nj = dir_j.norm();
  if (ni <= eps || nj <= eps) return 0.0;
  return std::clamp(dir_i.dot(dir_j) / (ni * nj), -1.0, 1.0);
}

Eigen::Vector2d last_walking_direction(const Matrix& trajectory) {
  const Index t = trajectory.rows();
  if (t < 2) return Eigen::Vector2d::Zero();
  return (trajectory.row(t - 1) - trajectory.row(t - 2)).transpose();
}

Tensor last_steps(const Tensor& stacked, Index steps) {
  const Index m = stacked.rows() / steps;
  std::vector<Index> idx(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) idx[static_cast<std::size_t>(i)] = i * steps + steps - 1;
  return gather_rows(stacked, idx);
}

namespace {

void require_trajectories(const Tensor& trajs, Index steps) {
  if (steps <= 0) throw ContractError("temporal encoder needs at least one step");
  if (trajs.cols() != 2 || trajs.rows() % steps != 0) {
    throw DimensionError("temporal encoder expects stacked (M*" + std::to_string(steps) +
                         ") x 2 positions, got " + trajs.shape_str());
  }
  if (!trajs.value().allFinite()) throw DataError("non-finite trajectory position");
}

std::vector<Index> tiled_steps(Index m, Index steps) {
  std::vector<Index> idx(static_cast<std::size_t>(m * steps));
  for (Index i = 0; i < m; ++i)
    for (Index t = 0; t < steps; ++t) idx[static_cast<std::size_t>(i * steps + t)] = t;
  return idx;
}

}  // namespace

TemporalGraphormer::TemporalGraphormer(const TemporalOptions& opt, Rng& rng)
    : opt_(opt),
      node_mlp_({2, opt.width, opt.width}, rng),
      centrality_(1, opt.width, rng),
      positional_(Tensor::parameter(randn(opt.max_steps, opt.width, rng, 0.02))),
      block_(opt.width, opt.heads, 2 * opt.width, rng) {}

Tensor TemporalGraphormer::centrality_embedding(Index steps) const {
  const TemporalGraph g = build_temporal_adjacency(steps);
  Matrix deg(steps, 1);
  for (Index t = 0; t < steps; ++t) deg(t, 0) = static_cast<double>(centrality_degree(g, t));
  return centrality_(Tensor(deg));
}

Tensor TemporalGraphormer::node_embedding(const Tensor& trajs, Index steps) const {
  require_trajectories(trajs, steps);
  if (steps > opt_.max_steps) {
    throw ContractError("trajectory of " + std::to_string(steps) + " steps exceeds positional table of " +
                        std::to_string(opt_.max_steps));
  }
  const Index m = trajs.rows() / steps;
  const std::vector<Index> tiles = tiled_steps(m, steps);
  Tensor h = node_mlp_(trajs);
  if (opt_.use_centrality) h = h + gather_rows(centrality_embedding(steps), tiles);
  if (opt_.use_positional) h = h + gather_rows(positional_, tiles);
  return h;
}

Tensor TemporalGraphormer::operator()(const Tensor& trajs, Index steps,
                                      AttentionTrace* trace) const {
  const Tensor h = node_embedding(trajs, steps);
  const Index m = trajs.rows() / steps;
  const std::vector<Index> groups(static_cast<std::size_t>(m), steps);
  std::vector<Matrix> masks;
  if (opt_.use_mask) masks.assign(static_cast<std::size_t>(m), build_temporal_adjacency(steps).adjacency);
  return block_(h, groups, masks, trace);
}

void TemporalGraphormer::collect(ParameterSet& ps, const std::string& prefix) const {
  node_mlp_.collect(ps, prefix + ".node_mlp");
  centrality_.collect(ps, prefix + ".centrality");
  ps.add(prefix + ".positional", positional_);
  block_.collect(ps, prefix + ".block");
}

GruTemporalEncoder::GruTemporalEncoder(Index width, Rng& rng)
    : width_(width), embed_({2, width, width}, rng), cell_(width, width, rng) {}

Tensor GruTemporalEncoder::operator()(const Tensor& trajs, Index steps, AttentionTrace*) const {
  require_trajectories(trajs, steps);
  const Index m = trajs.rows() / steps;
  const Tensor e = embed_(trajs);
  Tensor h = Tensor::zeros(m, width_);
  std::vector<Tensor> states;
  std::vector<Index> rows(static_cast<std::size_t>(m));
  for (Index t = 0; t < steps; ++t) {
    for (Index i = 0; i < m; ++i) rows[static_cast<std::size_t>(i)] = i * steps + t;
    h = cell_(gather_rows(e, rows), h);
    states.push_back(h);
  }
  // states are time-major; reorder to trajectory-major.
  const Tensor all = concat_rows(states);
  std::vector<Index> order(static_cast<std::size_t>(m * steps));
  for (Index i = 0; i < m; ++i)
    for (Index t = 0; t < steps; ++t) order[static_cast<std::size_t>(i * steps + t)] = t * m + i;
  return gather_rows(all, order);
}

void GruTemporalEncoder::collect(ParameterSet& ps, const std::string& prefix) const {
  embed_.collect(ps, prefix + ".embed");
  cell_.collect(ps, prefix + ".gru");
}

SpatialGraphormer::SpatialGraphormer(const SpatialOptions& opt, Rng& rng)
    : opt_(opt),
      position_mlp_({2, opt.width}, rng, true),
      steering_mlp_({1, opt.width}, rng, true),
      block_(opt.width, opt.heads, 2 * opt.width, rng) {}

Tensor SpatialGraphormer::operator()(std::span<const SpatialGroup> groups, const Tensor& temporal,
                                     AttentionTrace* trace) const {
  Index total = 0;
  for (const auto& g : groups) total += g.now.rows();
  if (temporal.rows() != total || temporal.cols() != opt_.width) {
    throw DimensionError("spatial graphormer: temporal embeddings " + temporal.shape_str() +
                         " do not match " + std::to_string(total) + " pedestrians");
  }
  Matrix rel(total, 2);
  Matrix steer(total, 1);
  std::vector<Index> sizes;
  std::vector<Matrix> masks;
  Index off = 0;
  for (const auto& g : groups) {
    const Index n = g.now.rows();
    if (g.target < 0 || g.target >= n) throw ContractError("spatial group target out of range");
    const SpatialGraph sg = build_spatial_adjacency(g.prev, g.now);
    const Eigen::Vector2d target_dir = sg.walk_dirs.row(g.target).transpose();
    for (Index j = 0; j < n; ++j) {
      rel.row(off + j) = g.now.row(j) - g.now.row(g.target);
      steer(off + j, 0) = steering_cosine(target_dir, sg.walk_dirs.row(j).transpose());
    }
    sizes.push_back(n);
    if (opt_.use_fov_mask) masks.push_back(sg.adjacency);
    off += n;
  }
  Tensor nodes = temporal;
  if (opt_.use_position) nodes = nodes + position_mlp_(Tensor(rel));
  if (opt_.use_steering) nodes = nodes + steering_mlp_(Tensor(steer));
  return block_(nodes, sizes, masks, trace);
}

void SpatialGraphormer::collect(ParameterSet& ps, const std::string& prefix) const {
  position_mlp_.collect(ps, prefix + ".position_mlp");
  steering_mlp_.collect(ps, prefix + ".steering_mlp");
  block_.collect(ps, prefix + ".block");
}

namespace {

std::unique_ptr<TemporalEncoder> make_temporal(const EncoderOptions& opt, Rng& rng) {
  if (opt.gru_temporal) return std::make_unique<GruTemporalEncoder>(opt.temporal.width, rng);
  return std::make_unique<TemporalGraphormer>(opt.temporal, rng);
}

}  // namespace

DualGraphormer::DualGraphormer(const EncoderOptions& opt, Rng& rng) : opt_(opt) {
  if (opt.temporal.width != opt.spatial.width) {
    throw ConfigError("temporal and spatial graphormers must share the model width");
  }
  if (opt.obs_len < 1 || opt.pred_len < 1) throw ConfigError("obs_len and pred_len must be >= 1");
  opt_.temporal.max_steps = std::max(opt.temporal.max_steps, opt.obs_len + opt.pred_len);
  tg_full_ = make_temporal(opt_, rng);
  tg_hist_ = make_temporal(opt_, rng);
  tg_target_ = make_temporal(opt_, rng);
  if (opt_.use_spatial) sg_ = SpatialGraphormer(opt_.spatial, rng);
  if (opt_.behavior_channels != opt_.temporal.width) {
    projection_ = Linear(opt_.temporal.width, opt_.behavior_channels, rng);
    has_projection_ = true;
  }
}

EncodedBatch DualGraphormer::encode(std::span<const EncodeInput> inputs,
                                    bool require_behavior) const {
  if (inputs.empty()) throw ContractError("encode: empty batch");
  const Index to = opt_.obs_len;
  const Index tp = opt_.pred_len;
  const Index batch = static_cast<Index>(inputs.size());

  Index peds = 0;
  for (const auto& in : inputs) {
    if (in.obs.empty()) throw ContractError("encode: scene without pedestrians");
    if (in.target < 0 || in.target >= static_cast<Index>(in.obs.size())) {
      throw ContractError("encode: target index out of range");
    }
    if (require_behavior && in.future.rows() != tp) {
      throw ContractError("encode: training requires the target's " + std::to_string(tp) +
                          "-step future");
    }
    peds += static_cast<Index>(in.obs.size());
  }

  Matrix hist(peds * to, 2);
  Matrix target_hist(batch * to, 2);
  Matrix full(require_behavior ? batch * (to + tp) : 0, 2);
  std::vector<SpatialGroup> groups;
  std::vector<Index> target_rows;
  Index p = 0;
  for (Index b = 0; b < batch; ++b) {
    const EncodeInput& in = inputs[static_cast<std::size_t>(b)];
    for (const auto& o : in.obs) {
      if (o.rows() != to || o.cols() != 2) {
        throw DimensionError("encode: observed trajectory must be " + std::to_string(to) + " x 2");
      }
    }
    const Eigen::RowVector2d origin = in.obs[static_cast<std::size_t>(in.target)].row(to - 1);
    SpatialGroup g;
    const Index n = static_cast<Index>(in.obs.size());
    g.prev.resize(n, 2);
    g.now.resize(n, 2);
    g.target = in.target;
    for (Index j = 0; j < n; ++j) {
      const Matrix local = in.obs[static_cast<std::size_t>(j)].rowwise() - origin;
      hist.middleRows((p + j) * to, to) = local;
      g.now.row(j) = local.row(to - 1);
      g.prev.row(j) = local.row(to >= 2 ? to - 2 : to - 1);
    }
    const Matrix target_local = in.obs[static_cast<std::size_t>(in.target)].rowwise() - origin;
    target_hist.middleRows(b * to, to) = target_local;
    if (require_behavior) {
      full.middleRows(b * (to + tp), to) = target_local;
      full.middleRows(b * (to + tp) + to, tp) = in.future.rowwise() - origin;
    }
    target_rows.push_back(p + in.target);
    groups.push_back(std::move(g));
    p += n;
  }

  EncodedBatch out;
  out.th_target = last_steps((*tg_target_)(Tensor(target_hist), to), to);
  if (opt_.use_spatial) {
    const Tensor th_last = last_steps((*tg_hist_)(Tensor(hist), to), to);
    out.sh_target = gather_rows(sg_(groups, th_last), target_rows);
    out.st = out.th_target + out.sh_target;
  } else {
    out.sh_target = Tensor::zeros(batch, opt_.temporal.width);
    out.st = out.th_target;
  }
  if (require_behavior) {
    Tensor mb = last_steps((*tg_full_)(Tensor(full), to + tp), to + tp);
    out.mb = has_projection_ ? projection_(mb) : mb;
    out.has_behavior = true;
  }
  return out;
}

EncodedScene DualGraphormer::encode_scene(const std::vector<Matrix>& obs,
                                          const std::vector<Matrix>* future) const {
  const Index n = static_cast<Index>(obs.size());
  if (future != nullptr && static_cast<Index>(future->size()) != n) {
    throw ContractError("encode_scene: one future per pedestrian required");
  }
  std::vector<EncodeInput> inputs(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    auto& in = inputs[static_cast<std::size_t>(i)];
    in.obs = obs;
    in.target = i;
    if (future != nullptr) in.future = (*future)[static_cast<std::size_t>(i)];
  }
  const EncodedBatch enc = encode(inputs, future != nullptr);

  EncodedScene scene;
  scene.th_target = enc.th_target.value();
  scene.sh = enc.sh_target.value();
  scene.st = enc.st.value();
  if (enc.has_behavior) scene.mb = enc.mb.value();
  // History embeddings in the scene's own frame (no per-target translation).
  Matrix hist(n * opt_.obs_len, 2);
  for (Index i = 0; i < n; ++i) hist.middleRows(i * opt_.obs_len, opt_.obs_len) = obs[static_cast<std::size_t>(i)];
  const Tensor th = (*tg_hist_)(Tensor(hist), opt_.obs_len);
  for (Index i = 0; i < n; ++i) scene.th.push_back(th.value().middleRows(i * opt_.obs_len, opt_.obs_len));
  return scene;
}

void DualGraphormer::collect(ParameterSet& ps, const std::string& prefix) const {
  tg_full_->collect(ps, prefix + ".tg_behavior");
  tg_hist_->collect(ps, prefix + ".tg_history");
  tg_target_->collect(ps, prefix + ".tg_target");
  if (opt_.use_spatial) sg_.collect(ps, prefix + ".sg");
  if (has_projection_) projection_.collect(ps, prefix + ".behavior_proj");
}

}  // namespace stglow
