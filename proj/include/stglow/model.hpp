// SPDX-License-Identifier: Apache-2.0
#pragma once

// End-to-end model: dual graphormer encoder, conditional flow over motion
// behaviors and the bidirectional decoder, with the training objective and
// best-of-K prediction.

#include <cstdint>
#include <span>
#include <vector>

#include "stglow/config.hpp"
#include "stglow/data.hpp"
#include "stglow/decoder.hpp"
#include "stglow/flow.hpp"
#include "stglow/graphormer.hpp"
#include "stglow/optim.hpp"

namespace stglow {

EncoderOptions encoder_options(const Config& c);
FlowOptions flow_options(const Config& c);
DecoderOptions decoder_options(const Config& c);

struct Losses {
  Tensor total;  // nll + Σ traj
  Tensor nll;    // mean over the batch, nats per behavior vector
  Tensor traj;   // B x 1
};

// Where the base samples for the sampled behaviors come from. By default
// they are drawn per row from (seed, stream_ids[b], k); `fixed`, when set,
// supplies the (B*K) x C matrix directly.
struct SampleSource {
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> stream_ids;
  const Matrix* fixed = nullptr;
};

class StGlowModel {
 public:
  // Parameters are drawn from the kInit stream of config.seed; the encoder,
  // flow and decoder each use their own sub-stream.
  explicit StGlowModel(const Config& config);
  StGlowModel(const StGlowModel&) = delete;
  StGlowModel& operator=(const StGlowModel&) = delete;

  const Config& config() const { return config_; }
  DualGraphormer& encoder() { return encoder_; }
  const DualGraphormer& encoder() const { return encoder_; }
  FlowStack& flow() { return flow_; }
  const FlowStack& flow() const { return flow_; }
  BidirectionalDecoder& decoder() { return decoder_; }
  const BidirectionalDecoder& decoder() const { return decoder_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  // Encoder inputs for each window's target. Throws ConfigError when window
  // lengths differ from the model's t_o / t_p.
  std::vector<EncodeInput> inputs(std::span<const SceneWindow> windows, bool with_future) const;

  // Data-dependent initialization of the flow's pattern normalizations from
  // the behaviors of `windows`. No-op without pattern normalization.
  void initialize_flow(std::span<const SceneWindow> windows);
  bool flow_initialized() const { return flow_.initialized(); }

  // Training objective on a batch with K = `k` sampled behaviors per target.
  Losses losses(std::span<const SceneWindow> windows, Index k, double sigma,
                const SampleSource& source) const;

  // Predicted futures in each window's normalized frame: [window][sample],
  // each t_p x 2.
  std::vector<std::vector<Matrix>> predict(std::span<const SceneWindow> windows, Index k,
                                           double sigma, const SampleSource& source) const;

 private:
  Config config_;
  DualGraphormer encoder_;
  FlowStack flow_;
  BidirectionalDecoder decoder_;
  ParameterSet params_;
};

// Rotation of every trajectory of `w` about its normalized origin.
SceneWindow rotate_window(const SceneWindow& w, double angle);

}  // namespace stglow
