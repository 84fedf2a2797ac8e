// SPDX-License-Identifier: Apache-2.0
#pragma once

// Trajectory datasets: ETH/UCY-format text ingestion, fixed-length scene
// windows in a target-centered frame, leave-one-out splits, and analytic
// synthetic scenes.

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "stglow/tensor.hpp"

namespace stglow {

struct RawTrack {
  std::int64_t ped_id = 0;
  std::vector<std::int64_t> frames;  // strictly ascending
  Matrix positions;                  // frames.size() x 2, meters
};

// One target pedestrian in one time window. Positions are translated so the
// target's last observed position is the origin; `origin` restores the
// world frame.
struct SceneWindow {
  std::string scene;
  std::int64_t start_frame = 0;
  std::vector<std::int64_t> ped_ids;
  std::vector<Matrix> obs;  // N entries of t_o x 2
  std::vector<Matrix> fut;  // N entries of t_p x 2
  Index target = 0;
  Eigen::RowVector2d origin = Eigen::RowVector2d::Zero();

  Index pedestrians() const { return static_cast<Index>(obs.size()); }
  Index obs_len() const { return obs.empty() ? 0 : obs.front().rows(); }
  Index pred_len() const { return fut.empty() ? 0 : fut.front().rows(); }
};

// Rows `frame ped_id x y`, whitespace separated; blank lines are skipped.
// Throws ParseError naming the line on malformed rows and duplicate
// (ped_id, frame) pairs. Tracks are ordered by ped_id.
std::vector<RawTrack> parse_eth_ucy(std::istream& in, const std::string& source = "<stream>");
// Throws DataError if the file cannot be opened.
std::vector<RawTrack> load_eth_ucy(const std::string& path);

// Frame step shared by the tracks: the gcd of consecutive frame differences
// over all tracks (1 when no track has two frames).
std::int64_t annotation_step(const std::vector<RawTrack>& tracks);

// Sliding windows of t_o + t_p consecutive annotation steps starting every
// `stride` steps. Each window yields one SceneWindow per pedestrian present
// at every step of it; pedestrians with any missing step are left out.
// Throws ContractError when a length or the stride is < 1.
std::vector<SceneWindow> window_scenes(const std::vector<RawTrack>& tracks, Index t_o, Index t_p,
                                       Index stride = 1, const std::string& scene = "");

// Re-centers every trajectory of `w` on the chosen target.
SceneWindow retarget(const SceneWindow& w, Index target);

// World-frame copy of a normalized trajectory.
Matrix denormalize(const Matrix& traj, const Eigen::RowVector2d& origin);
Matrix normalize(const Matrix& traj, const Eigen::RowVector2d& origin);

struct NamedScene {
  std::string name;
  std::vector<SceneWindow> windows;
};

// (train, test): test holds the named scene's windows, train all others.
// Throws ConfigError for an unknown name.
std::pair<std::vector<SceneWindow>, std::vector<SceneWindow>> leave_one_out_split(
    const std::string& scene_name, const std::vector<NamedScene>& all_scenes);

// Writes the world-frame positions of every window in dataset text format.
// Window w occupies its own frame range and ped ids w * id_stride + j, so
// windows never merge on reload.
void write_eth_ucy(std::ostream& out, const std::vector<SceneWindow>& windows,
                   std::int64_t id_stride = 1000);

enum class SynthKind { kStraight, kTurn, kCrossingPair, kGroupParallel, kStopAndGo };

struct SynthSpec {
  std::vector<SynthKind> kinds{SynthKind::kStraight};  // cycled over scenes
  Index count = 64;
  std::uint64_t seed = 0;
  double noise = 0.02;       // position noise std, meters
  double speed_min = 0.3;    // meters per step
  double speed_max = 0.6;
  double heading_min = 0.0;  // primary walker's initial heading, radians
  double heading_max = 6.283185307179586;
  double turn_rate_min = 0.05;  // |heading change| per step for `turn`, radians
  double turn_rate_max = 0.15;
  Index neighbors = 1;       // extra independent walkers in single-walker kinds
  Index obs_len = 8;
  Index pred_len = 12;
};

// Throws ConfigError for an unknown name.
SynthKind parse_synth_kind(const std::string& name);
std::string synth_kind_name(SynthKind kind);

// Parses `synth:kind[+kind...][,key=value...]`, keys being count, seed,
// noise, speed_min, speed_max, heading_min, heading_max, turn_rate_min,
// turn_rate_max, neighbors, obs_len, pred_len. Throws
// ConfigError.
SynthSpec parse_synth_spec(const std::string& text);
bool is_synth_spec(const std::string& text);
std::string format_synth_spec(const SynthSpec& spec);

// One SceneWindow per scene with the kind's primary walker as target 0.
// Deterministic in the spec.
std::vector<SceneWindow> synth_scenes(const SynthSpec& spec);

}  // namespace stglow
