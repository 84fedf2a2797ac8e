// SPDX-License-Identifier: Apache-2.0
#pragma once

// Training, evaluation and sampling loops over scene windows.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "stglow/checkpoint.hpp"
#include "stglow/config.hpp"
#include "stglow/data.hpp"
#include "stglow/metrics.hpp"
#include "stglow/model.hpp"

namespace stglow {

// ---------------------------------------------------------------------------
// Data selection

// Named scenes for the configured dataset: one per eth_ucy file (named by
// file stem) or a single "synth" scene built from data.synth.
std::vector<NamedScene> load_scenes(const Config& config);
// All windows except those of data.test_scene.
std::vector<SceneWindow> training_windows(const Config& config);
// The configured test set: data.test_scene's windows, or data.test_synth.
std::vector<SceneWindow> test_windows(const Config& config);
// A dataset file or a synthetic spec (`synth:...`). Synthetic specs take
// their lengths from the model unless they set obs_len / pred_len.
std::vector<SceneWindow> load_windows(const std::string& path_or_spec, const Config& config);
SynthSpec synth_spec_for(const std::string& text, const Config& config);

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  std::uint64_t epoch = 0;  // 1-based
  double nll = 0.0;         // mean L_p over batches
  double traj = 0.0;        // mean L_traj per pedestrian
  double val_ade = -1.0;    // negative without validation windows
  std::uint64_t skipped = 0;
  double seconds = 0.0;
};

struct TrainOptions {
  std::string resume_path;               // checkpoint file to resume from
  const Checkpoint* resume = nullptr;    // in-memory alternative
  Index max_epochs = -1;                 // epochs to run in this call; -1 runs to the end
  bool write_checkpoints = true;         // last.ckpt / best.ckpt under train.out_dir
  std::ostream* log = nullptr;           // one line per epoch
};

struct TrainResult {
  Checkpoint last;
  Checkpoint best;  // lowest validation ADE; equals `last` without validation
  std::vector<EpochLog> history;
};

// Validation windows are a seed-fixed `train.val_fraction` share of
// `windows`. Singular flow steps are skipped and counted. A non-finite loss
// or gradient aborts with NumericError, leaving the last written checkpoint
// in place.
TrainResult train(const Config& config, const std::vector<SceneWindow>& windows,
                  const TrainOptions& options = {});
TrainResult train(const Config& config, const TrainOptions& options = {});

// Model rebuilt from a checkpoint's own config and parameters.
std::unique_ptr<StGlowModel> load_model(const Checkpoint& ckpt);

// ---------------------------------------------------------------------------
// Evaluation

// K futures for a window, in its normalized frame.
using Predictor = std::function<std::vector<Matrix>(const SceneWindow&, Index k)>;

EvalReport evaluate_predictor(const Predictor& predictor, std::span<const SceneWindow> windows,
                              Index k);
// Base samples for window i come from stream (eval seed, i, k), so results
// do not depend on batching. Throws ConfigError on a t_o / t_p mismatch.
EvalReport evaluate(const StGlowModel& model, std::span<const SceneWindow> windows, Index k,
                    double sigma, Index batch = 64);
std::uint64_t evaluation_seed(const Config& config);

// ---------------------------------------------------------------------------
// Sampling and plotting

struct TrajectoryRecord {
  std::int64_t ped_id = 0;
  Index k = 0;
  Index t = 0;  // 1 .. t_p
  double x = 0.0;
  double y = 0.0;
};

// K world-frame futures for every pedestrian of the window.
std::vector<TrajectoryRecord> sample_scene(const StGlowModel& model, const SceneWindow& window,
                                           Index k, double sigma, std::uint64_t stream);

void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRecord>& records);
// Throws ParseError.
std::vector<TrajectoryRecord> read_trajectory_csv(std::istream& in);

// Observed paths solid, ground-truth futures dashed, predictions thin and
// translucent. Coordinates depend only on the inputs.
std::string render_svg(const SceneWindow& window, const std::vector<TrajectoryRecord>& predictions);

struct SampleOutput {
  std::string csv_path;
  std::string svg_path;
  std::size_t rows = 0;
};

// Writes <out_dir>/scene_<id>.csv and .svg. Throws LookupError for an
// unknown scene id.
SampleOutput sample_and_plot(const StGlowModel& model, std::span<const SceneWindow> windows,
                             Index scene_id, Index k, double sigma, const std::string& out_dir);

}  // namespace stglow
