// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration. The text form is one `dotted.key = value` per line;
// `#` starts a comment. A `preset` key (paper or toy) is applied before any
// other key regardless of its position.

#include <cstdint>
#include <string>
#include <vector>

#include "stglow/decoder.hpp"
#include "stglow/tensor.hpp"

namespace stglow {

struct ModelConfig {
  Index width = 256;           // D
  Index heads = 4;
  Index channels = 256;        // C, behavior vector width
  Index flow_steps = 16;
  Index coupling_hidden = 256;
  bool factor_out = true;
  Index factor_channels = 64;
  Index factor_every = 4;
  double log_scale_clamp = 5.0;
  Index decoder_hidden = 256;  // D_h
  Index obs_len = 8;
  Index pred_len = 12;

  // Ablation switches.
  bool use_spatial = true;
  bool gru_temporal = false;
  bool use_pn = true;
  bool bidirectional = true;
  bool use_centrality = true;
  bool use_positional = true;
  bool use_mask = true;
  bool use_position = true;
  bool use_steering = true;
  bool use_fov_mask = true;
};

struct TrainConfig {
  Index batch = 128;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-6;
  Index epochs = 400;
  Index k = 20;
  double sigma = 1.0;
  LossWeights loss;
  double grad_clip = 0.0;       // global norm; 0 disables
  bool augment_rotate = false;  // random rotation about the target per window
  double val_fraction = 0.1;
  Index checkpoint_every = 1;   // epochs
  std::string out_dir = "runs";
};

struct EvalConfig {
  Index k = 20;
  double sigma = 1.0;
  Index batch = 64;
};

struct DataConfig {
  std::string format = "synth";  // synth | eth_ucy
  std::vector<std::string> paths;  // eth_ucy files, one per scene
  std::string test_scene;          // leave-one-out hold-out; empty keeps all for training
  std::string synth = "synth:straight+turn,count=64,seed=1";
  std::string test_synth = "synth:straight+turn,count=64,seed=2";
  Index stride = 1;
};

struct Config {
  std::string preset = "paper";
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  DataConfig data;
  std::uint64_t seed = 0;

  static Config paper();
  static Config toy();
  static Config preset_named(const std::string& name);

  // Throws ConfigError naming the key for unknown keys and bad values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  // Full snapshot; parse(to_text()) reproduces the config.
  std::string to_text() const;
  static Config parse(const std::string& text, const std::string& source = "<config>");
  static Config load(const std::string& path);

  // Throws ConfigError on inconsistent values.
  void validate() const;
};

// STGLOW_SEED, when set, replaces config.seed. Throws ConfigError if it is
// not an unsigned integer.
void apply_env_overrides(Config& config);

}  // namespace stglow
