// SPDX-License-Identifier: Apache-2.0
#pragma once

// Versioned binary checkpoints. Layout, all integers little-endian:
//   "STGF" u32 version
//   str config_text
//   u64 epoch  u64 global_step  u64 skipped_steps  f64 best_val_ade  u8 flow_initialized
//   str rng_state
//   u32 n  { str name  u32 ndims  u64 dims[ndims]  f64 payload[prod dims] } * n   parameters
//   u64 adam_step  u32 m  { matrix } * m  (first moments)  { matrix } * m  (second moments)
//   u64 fnv1a64 of every preceding byte
// where str is u32 length + bytes and f64 is the IEEE-754 bit pattern.

#include <cstdint>
#include <string>
#include <vector>

#include "stglow/model.hpp"
#include "stglow/optim.hpp"

namespace stglow {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Matrix value;
};

struct TrainingState {
  std::uint64_t epoch = 0;  // completed epochs
  std::uint64_t global_step = 0;
  std::uint64_t skipped_steps = 0;
  double best_val_ade = -1.0;  // negative until a validation pass ran
  std::string rng_state;       // textual engine state
  AdamState adam;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  bool flow_initialized = false;
  std::vector<NamedArray> parameters;
  TrainingState state;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
// Throws DataError on bad magic, unsupported version, truncation or a
// checksum mismatch.
Checkpoint deserialize_checkpoint(const std::string& bytes);

// Writes to a temporary file and renames it into place.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint capture(const StGlowModel& model, const TrainingState& state = {});
// Copies parameter values into `model`. Throws LookupError for a missing
// name and DimensionError for a shape mismatch.
void restore(StGlowModel& model, const Checkpoint& ckpt);

Config checkpoint_config(const Checkpoint& ckpt);

}  // namespace stglow
