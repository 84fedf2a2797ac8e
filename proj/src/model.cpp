// SPDX-License-Identifier: Apache-2.0
#include "stglow/model.hpp"

#include <cmath>

#include "stglow/errors.hpp"

namespace stglow {

EncoderOptions encoder_options(const Config& c) {
  const ModelConfig& m = c.model;
  EncoderOptions o;
  o.temporal.width = m.width;
  o.temporal.heads = m.heads;
  o.temporal.max_steps = m.obs_len + m.pred_len;
  o.temporal.use_centrality = m.use_centrality;
  o.temporal.use_positional = m.use_positional;
  o.temporal.use_mask = m.use_mask;
  o.spatial.width = m.width;
  o.spatial.heads = m.heads;
  o.spatial.use_position = m.use_position;
  o.spatial.use_steering = m.use_steering;
  o.spatial.use_fov_mask = m.use_fov_mask;
  o.use_spatial = m.use_spatial;
  o.gru_temporal = m.gru_temporal;
  o.behavior_channels = m.channels;
  o.obs_len = m.obs_len;
  o.pred_len = m.pred_len;
  return o;
}

FlowOptions flow_options(const Config& c) {
  const ModelConfig& m = c.model;
  FlowOptions o;
  o.channels = m.channels;
  o.steps = m.flow_steps;
  o.cond_width = m.width;
  o.hidden = m.coupling_hidden;
  o.use_pn = m.use_pn;
  o.factor_out = m.factor_out;
  o.factor_channels = m.factor_channels;
  o.factor_every = m.factor_every;
  o.log_scale_clamp = m.log_scale_clamp;
  return o;
}

DecoderOptions decoder_options(const Config& c) {
  DecoderOptions o;
  o.behavior_channels = c.model.channels;
  o.hidden = c.model.decoder_hidden;
  o.pred_len = c.model.pred_len;
  o.bidirectional = c.model.bidirectional;
  return o;
}

namespace {

Rng init_rng(const Config& c, std::uint64_t part) { return make_rng(c.seed, Stream::kInit, part); }

template <typename Module>
Module build(const Config& c, std::uint64_t part, auto options) {
  Rng rng = init_rng(c, part);
  return Module(options, rng);
}

}  // namespace

StGlowModel::StGlowModel(const Config& config)
    : config_((config.validate(), config)),
      encoder_(build<DualGraphormer>(config, 0, encoder_options(config))),
      flow_(build<FlowStack>(config, 1, flow_options(config))),
      decoder_(build<BidirectionalDecoder>(config, 2, decoder_options(config))) {
  encoder_.collect(params_, "encoder");
  flow_.collect(params_, "flow");
  decoder_.collect(params_, "decoder");
}

std::vector<EncodeInput> StGlowModel::inputs(std::span<const SceneWindow> windows,
                                             bool with_future) const {
  std::vector<EncodeInput> out;
  out.reserve(windows.size());
  for (const auto& w : windows) {
    if (w.obs_len() != config_.model.obs_len || (with_future && w.pred_len() != config_.model.pred_len)) {
      throw ConfigError("window of " + std::to_string(w.obs_len()) + "+" +
                        std::to_string(w.pred_len()) + " steps does not match the model's " +
                        std::to_string(config_.model.obs_len) + "+" +
                        std::to_string(config_.model.pred_len));
    }
    EncodeInput in;
    in.obs = w.obs;
    in.target = w.target;
    if (with_future) in.future = w.fut[static_cast<std::size_t>(w.target)];
    out.push_back(std::move(in));
  }
  return out;
}

void StGlowModel::initialize_flow(std::span<const SceneWindow> windows) {
  const auto in = inputs(windows, true);
  const EncodedBatch enc = encoder_.encode(in, true);
  flow_.initialize(enc.mb.value(), enc.st.value());
}

namespace {

Tensor sampled_behaviors(const FlowStack& flow, const Tensor& st, Index k, double sigma,
                         const SampleSource& source) {
  if (source.fixed != nullptr) {
    if (source.fixed->rows() != st.rows() * k || source.fixed->cols() != flow.channels()) {
      throw DimensionError("fixed base samples must be (B*K) x C");
    }
    return flow.reverse(Tensor(*source.fixed), repeat_rows(st, k));
  }
  return sample_behaviors(st, flow, k, sigma, source.seed, source.stream_ids);
}

}  // namespace

Losses StGlowModel::losses(std::span<const SceneWindow> windows, Index k, double sigma,
                           const SampleSource& source) const {
  const auto in = inputs(windows, true);
  const EncodedBatch enc = encoder_.encode(in, true);
  Losses out;
  out.nll = nll_loss(enc.mb, enc.st, flow_, 1.0);

  const Index b = static_cast<Index>(windows.size());
  const Index tp = config_.model.pred_len;
  Matrix gt_future(b, 2 * tp);
  Matrix gt_goal(b, 2);
  for (Index i = 0; i < b; ++i) {
    const Matrix& f = in[static_cast<std::size_t>(i)].future;
    gt_future.row(i) = flatten_trajectory(f).row(0);
    gt_goal.row(i) = f.row(tp - 1);
  }
  const DecodedBatch decoded = decoder_(sampled_behaviors(flow_, enc.st, k, sigma, source));
  out.traj = trajectory_loss(decoded, k, gt_future, gt_goal, config_.train.loss);
  out.total = total_loss(out.nll, out.traj);
  return out;
}

std::vector<std::vector<Matrix>> StGlowModel::predict(std::span<const SceneWindow> windows,
                                                      Index k, double sigma,
                                                      const SampleSource& source) const {
  const auto in = inputs(windows, false);
  const EncodedBatch enc = encoder_.encode(in, false);
  const DecodedBatch decoded = decoder_(sampled_behaviors(flow_, enc.st, k, sigma, source));
  const Matrix& flat = decoded.prediction().value();
  std::vector<std::vector<Matrix>> out(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    for (Index s = 0; s < k; ++s) out[i].push_back(trajectory_row(flat, static_cast<Index>(i) * k + s));
  }
  return out;
}

SceneWindow rotate_window(const SceneWindow& w, double angle) {
  Eigen::Matrix2d r;
  r << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  SceneWindow out = w;
  for (auto& o : out.obs) o = o * r.transpose();
  for (auto& f : out.fut) f = f * r.transpose();
  return out;
}

}  // namespace stglow
