// SPDX-License-Identifier: Apache-2.0
#include "stglow/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "stglow/errors.hpp"

namespace stglow {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Data selection

SynthSpec synth_spec_for(const std::string& text, const Config& config) {
  SynthSpec spec = parse_synth_spec(text);
  if (text.find("obs_len=") == std::string::npos) spec.obs_len = config.model.obs_len;
  if (text.find("pred_len=") == std::string::npos) spec.pred_len = config.model.pred_len;
  return spec;
}

std::vector<NamedScene> load_scenes(const Config& config) {
  std::vector<NamedScene> scenes;
  if (config.data.format == "synth") {
    scenes.push_back({"synth", synth_scenes(synth_spec_for(config.data.synth, config))});
    return scenes;
  }
  if (config.data.paths.empty()) throw ConfigError("data.paths is empty for eth_ucy data");
  for (const auto& path : config.data.paths) {
    const std::string name = fs::path(path).stem().string();
    scenes.push_back({name, window_scenes(load_eth_ucy(path), config.model.obs_len,
                                          config.model.pred_len, config.data.stride, name)});
  }
  return scenes;
}

std::vector<SceneWindow> training_windows(const Config& config) {
  const auto scenes = load_scenes(config);
  if (config.data.format == "synth" || config.data.test_scene.empty()) {
    std::vector<SceneWindow> all;
    for (const auto& s : scenes) all.insert(all.end(), s.windows.begin(), s.windows.end());
    return all;
  }
  return leave_one_out_split(config.data.test_scene, scenes).first;
}

std::vector<SceneWindow> test_windows(const Config& config) {
  if (config.data.format == "synth") {
    auto w = synth_scenes(synth_spec_for(config.data.test_synth, config));
    for (auto& s : w) s.scene = "synth_test";
    return w;
  }
  if (config.data.test_scene.empty()) throw ConfigError("data.test_scene is not set");
  return leave_one_out_split(config.data.test_scene, load_scenes(config)).second;
}

std::vector<SceneWindow> load_windows(const std::string& path_or_spec, const Config& config) {
  if (is_synth_spec(path_or_spec)) return synth_scenes(synth_spec_for(path_or_spec, config));
  const std::string name = fs::path(path_or_spec).stem().string();
  return window_scenes(load_eth_ucy(path_or_spec), config.model.obs_len, config.model.pred_len,
                       config.data.stride, name);
}

// ---------------------------------------------------------------------------
// Evaluation

std::uint64_t evaluation_seed(const Config& config) {
  return stream_seed(config.seed, static_cast<std::uint64_t>(Stream::kSample), 0xe7a1ULL);
}

namespace {

void check_lengths(const Config& config, std::span<const SceneWindow> windows) {
  for (const auto& w : windows) {
    if (w.obs_len() != config.model.obs_len || w.pred_len() != config.model.pred_len) {
      throw ConfigError("data windows have " + std::to_string(w.obs_len()) + "+" +
                        std::to_string(w.pred_len()) + " steps but the model expects " +
                        std::to_string(config.model.obs_len) + "+" +
                        std::to_string(config.model.pred_len));
    }
  }
}

std::string dataset_name(const SceneWindow& w) { return w.scene.empty() ? "data" : w.scene; }

void score(MetricsAccumulator& acc, const SceneWindow& w, const std::vector<Matrix>& preds) {
  const Matrix gt = denormalize(w.fut[static_cast<std::size_t>(w.target)], w.origin);
  std::vector<Matrix> world;
  world.reserve(preds.size());
  for (const auto& p : preds) world.push_back(denormalize(p, w.origin));
  acc.add(dataset_name(w), best_of_k(world, gt));
}

}  // namespace

EvalReport evaluate_predictor(const Predictor& predictor, std::span<const SceneWindow> windows,
                              Index k) {
  if (k < 1) throw ContractError("evaluate: K must be >= 1");
  MetricsAccumulator acc(k);
  for (const auto& w : windows) score(acc, w, predictor(w, k));
  return acc.report();
}

EvalReport evaluate(const StGlowModel& model, std::span<const SceneWindow> windows, Index k,
                    double sigma, Index batch) {
  if (k < 1) throw ContractError("evaluate: K must be >= 1");
  check_lengths(model.config(), windows);
  MetricsAccumulator acc(k);
  SampleSource source;
  source.seed = evaluation_seed(model.config());
  const Index n = static_cast<Index>(windows.size());
  for (Index start = 0; start < n; start += batch) {
    const Index count = std::min(batch, n - start);
    source.stream_ids.resize(static_cast<std::size_t>(count));
    std::iota(source.stream_ids.begin(), source.stream_ids.end(), static_cast<std::uint64_t>(start));
    const auto chunk = windows.subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(count));
    const auto preds = model.predict(chunk, k, sigma, source);
    for (Index i = 0; i < count; ++i) {
      score(acc, chunk[static_cast<std::size_t>(i)], preds[static_cast<std::size_t>(i)]);
    }
  }
  return acc.report();
}

// ---------------------------------------------------------------------------
// Training

std::unique_ptr<StGlowModel> load_model(const Checkpoint& ckpt) {
  auto model = std::make_unique<StGlowModel>(checkpoint_config(ckpt));
  restore(*model, ckpt);
  return model;
}

namespace {

std::string rng_text(const Rng& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

Rng rng_from_text(const std::string& text) {
  Rng rng;
  std::istringstream s(text);
  s >> rng;
  if (!s) throw DataError("checkpoint holds an unreadable RNG state");
  return rng;
}

// Every model.* key must agree for a resume to be meaningful.
void require_same_model(const Config& a, const Config& b) {
  for (const auto& key : Config::keys()) {
    if (key.rfind("model.", 0) == 0 && a.get(key) != b.get(key)) {
      throw ConfigError("resume: checkpoint has " + key + " = " + b.get(key) +
                        " but the config has " + a.get(key));
    }
  }
}

double global_grad_norm(const ParameterSet& ps) {
  double sq = 0.0;
  for (const auto& [name, t] : ps) {
    if (t.has_grad()) sq += t.grad().squaredNorm();
  }
  return std::sqrt(sq);
}

void check_gradients(const ParameterSet& ps) {
  for (const auto& [name, t] : ps) {
    if (t.has_grad() && !t.grad().allFinite()) throw NumericError("non-finite gradient in " + name);
  }
}

void scale_gradients(ParameterSet& ps, double factor) {
  for (auto& [name, t] : ps) {
    if (t.has_grad()) {
      const Matrix g = t.grad() * factor;
      t.zero_grad();
      t.node()->accumulate(g);
    }
  }
}

}  // namespace

TrainResult train(const Config& config, const std::vector<SceneWindow>& windows,
                  const TrainOptions& options) {
  config.validate();
  check_lengths(config, windows);
  if (windows.empty()) throw DataError("train: no training windows");

  StGlowModel model(config);
  TrainingState state;
  Rng rng = make_rng(config.seed, Stream::kShuffle, 1);

  Checkpoint resumed;
  const Checkpoint* from = options.resume;
  if (from == nullptr && !options.resume_path.empty()) {
    resumed = load_checkpoint(options.resume_path);
    from = &resumed;
  }
  if (from != nullptr) {
    require_same_model(config, checkpoint_config(*from));
    restore(model, *from);
    state = from->state;
    rng = rng_from_text(state.rng_state);
  }

  // Seed-fixed validation split, independent of the shuffle stream.
  std::vector<std::size_t> perm(windows.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng split_rng = make_rng(config.seed, Stream::kShuffle, 0);
  std::shuffle(perm.begin(), perm.end(), split_rng);
  std::size_t n_val = static_cast<std::size_t>(
      std::floor(config.train.val_fraction * static_cast<double>(windows.size())));
  if (n_val >= windows.size()) n_val = 0;
  std::vector<SceneWindow> val;
  std::vector<std::size_t> train_ids(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(train_ids.begin(), train_ids.end());
  for (std::size_t i = 0; i < n_val; ++i) val.push_back(windows[perm[i]]);

  const fs::path out_dir(config.train.out_dir);
  const std::string last_path = (out_dir / "last.ckpt").string();
  const std::string best_path = (out_dir / "best.ckpt").string();

  TrainResult result;
  auto snapshot = [&] {
    state.rng_state = rng_text(rng);
    return capture(model, state);
  };
  if (from == nullptr) {
    result.last = snapshot();
    if (options.write_checkpoints) save_checkpoint(last_path, result.last);
  }
  result.best = from != nullptr && options.write_checkpoints && fs::exists(best_path)
                    ? load_checkpoint(best_path)
                    : snapshot();

  AdamOptions adam;
  adam.lr = config.train.lr;
  adam.beta1 = config.train.beta1;
  adam.beta2 = config.train.beta2;
  adam.weight_decay = config.train.weight_decay;

  const std::uint64_t total_epochs = static_cast<std::uint64_t>(config.train.epochs);
  std::uint64_t stop = total_epochs;
  if (options.max_epochs >= 0) {
    stop = std::min(total_epochs, state.epoch + static_cast<std::uint64_t>(options.max_epochs));
  }
  const std::size_t batch = static_cast<std::size_t>(config.train.batch);
  ParameterSet& params = model.parameters();

  while (state.epoch < stop) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order = train_ids;
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = state.epoch + 1;
    double nll_sum = 0.0;
    double traj_sum = 0.0;
    std::size_t batches = 0;
    std::size_t peds = 0;
    const std::uint64_t skipped_before = state.skipped_steps;

    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t count = std::min(batch, order.size() - start);
      std::vector<SceneWindow> chunk;
      SampleSource source;
      source.seed = stream_seed(config.seed, static_cast<std::uint64_t>(Stream::kSample),
                                state.global_step);
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t id = order[start + i];
        if (config.train.augment_rotate) {
          const double angle = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
          chunk.push_back(rotate_window(windows[id], angle));
        } else {
          chunk.push_back(windows[id]);
        }
        source.stream_ids.push_back(id);
      }
      ++state.global_step;
      if (!model.flow_initialized()) model.initialize_flow(chunk);

      try {
        Tape tape;
        TapeScope scope(tape);
        const Losses l = model.losses(chunk, config.train.k, config.train.sigma, source);
        tape.backward(l.total);
        check_gradients(params);
        if (config.train.grad_clip > 0.0) {
          const double norm = global_grad_norm(params);
          if (norm > config.train.grad_clip) scale_gradients(params, config.train.grad_clip / norm);
        }
        adam_step(params, state.adam, adam);
        params.zero_grad();
        nll_sum += l.nll.item();
        traj_sum += l.traj.value().sum();
        ++batches;
        peds += count;
      } catch (const SingularityError&) {
        params.zero_grad();
        ++state.skipped_steps;
      } catch (const NumericError& e) {
        params.zero_grad();
        throw NumericError("training aborted in epoch " + std::to_string(log.epoch) + " step " +
                           std::to_string(state.global_step) + ": " + e.what() +
                           (options.write_checkpoints ? "; last good checkpoint: " + last_path : ""));
      }
    }

    log.nll = batches ? nll_sum / static_cast<double>(batches) : 0.0;
    log.traj = peds ? traj_sum / static_cast<double>(peds) : 0.0;
    log.skipped = state.skipped_steps - skipped_before;
    state.epoch += 1;
    if (!val.empty()) {
      log.val_ade = evaluate(model, val, config.eval.k, config.eval.sigma, config.eval.batch).average().ade;
    }
    const bool improved = !val.empty() && (state.best_val_ade < 0.0 || log.val_ade < state.best_val_ade);
    if (improved) state.best_val_ade = log.val_ade;
    result.last = snapshot();
    if (improved || val.empty()) {
      result.best = result.last;
      if (options.write_checkpoints) save_checkpoint(best_path, result.best);
    }
    if (options.write_checkpoints &&
        (state.epoch % static_cast<std::uint64_t>(config.train.checkpoint_every) == 0 || state.epoch == stop)) {
      save_checkpoint(last_path, result.last);
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (options.log != nullptr) {
      *options.log << "epoch " << log.epoch << '/' << total_epochs << std::fixed
                   << std::setprecision(4) << " L_p=" << log.nll << " L_traj=" << log.traj;
      if (log.val_ade >= 0.0) *options.log << " val_ade=" << log.val_ade;
      *options.log << " skipped=" << log.skipped << " time=" << std::setprecision(1) << log.seconds
                   << "s" << std::defaultfloat << std::endl;
    }
    result.history.push_back(log);
  }
  if (result.history.empty() && from != nullptr) result.last = *from;
  return result;
}

TrainResult train(const Config& config, const TrainOptions& options) {
  return train(config, training_windows(config), options);
}

// ---------------------------------------------------------------------------
// Sampling and plotting

std::vector<TrajectoryRecord> sample_scene(const StGlowModel& model, const SceneWindow& window,
                                           Index k, double sigma, std::uint64_t stream) {
  check_lengths(model.config(), {&window, 1});
  std::vector<SceneWindow> targets;
  SampleSource source;
  source.seed = evaluation_seed(model.config());
  for (Index i = 0; i < window.pedestrians(); ++i) {
    targets.push_back(retarget(window, i));
    source.stream_ids.push_back(stream_seed(stream, static_cast<std::uint64_t>(i)));
  }
  const auto preds = model.predict(targets, k, sigma, source);
  std::vector<TrajectoryRecord> out;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    for (Index s = 0; s < k; ++s) {
      const Matrix world = denormalize(preds[i][static_cast<std::size_t>(s)], targets[i].origin);
      for (Index t = 0; t < world.rows(); ++t) {
        out.push_back({window.ped_ids[i], s, t + 1, world(t, 0), world(t, 1)});
      }
    }
  }
  return out;
}

void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRecord>& records) {
  out << "ped_id,k,t,x,y\n" << std::setprecision(17);
  for (const auto& r : records) out << r.ped_id << ',' << r.k << ',' << r.t << ',' << r.x << ',' << r.y << '\n';
}

std::vector<TrajectoryRecord> read_trajectory_csv(std::istream& in) {
  std::vector<TrajectoryRecord> out;
  std::string line;
  long no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (no == 1) {
      if (line != "ped_id,k,t,x,y") throw ParseError("trajectory CSV: bad header");
      continue;
    }
    if (line.empty()) continue;
    std::istringstream s(line);
    TrajectoryRecord r;
    char c1 = 0, c2 = 0, c3 = 0, c4 = 0;
    if (!(s >> r.ped_id >> c1 >> r.k >> c2 >> r.t >> c3 >> r.x >> c4 >> r.y) || c1 != ',' ||
        c2 != ',' || c3 != ',' || c4 != ',') {
      throw ParseError("trajectory CSV line " + std::to_string(no) + ": malformed row");
    }
    out.push_back(r);
  }
  return out;
}

namespace {

struct Canvas {
  double min_x, min_y, scale, height;
  std::string point(double x, double y) const {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << 20.0 + (x - min_x) * scale << ' '
      << height - 20.0 - (y - min_y) * scale;
    return s.str();
  }
};

std::string path_data(const Canvas& c, const std::vector<Eigen::RowVector2d>& pts) {
  std::string d;
  for (std::size_t i = 0; i < pts.size(); ++i) d += (i ? " L " : "M ") + c.point(pts[i](0), pts[i](1));
  return d;
}

std::vector<Eigen::RowVector2d> rows_of(const Matrix& m) {
  std::vector<Eigen::RowVector2d> out;
  for (Index i = 0; i < m.rows(); ++i) out.emplace_back(m(i, 0), m(i, 1));
  return out;
}

}  // namespace

std::string render_svg(const SceneWindow& window, const std::vector<TrajectoryRecord>& predictions) {
  std::vector<std::vector<Eigen::RowVector2d>> observed, truth;
  for (Index j = 0; j < window.pedestrians(); ++j) {
    const std::size_t u = static_cast<std::size_t>(j);
    observed.push_back(rows_of(denormalize(window.obs[u], window.origin)));
    auto fut = rows_of(denormalize(window.fut[u], window.origin));
    fut.insert(fut.begin(), observed.back().back());
    truth.push_back(std::move(fut));
  }
  // Predictions grouped by (ped_id, k) in file order, each prefixed by the
  // pedestrian's last observed position.
  std::vector<std::pair<std::pair<std::int64_t, Index>, std::vector<Eigen::RowVector2d>>> predicted;
  for (const auto& r : predictions) {
    const auto key = std::make_pair(r.ped_id, r.k);
    if (predicted.empty() || predicted.back().first != key) {
      predicted.push_back({key, {}});
      const auto it = std::find(window.ped_ids.begin(), window.ped_ids.end(), r.ped_id);
      if (it != window.ped_ids.end()) {
        predicted.back().second.push_back(observed[static_cast<std::size_t>(it - window.ped_ids.begin())].back());
      }
    }
    predicted.back().second.emplace_back(r.x, r.y);
  }

  double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
  auto extend = [&](const std::vector<Eigen::RowVector2d>& pts) {
    for (const auto& p : pts) {
      min_x = std::min(min_x, p(0));
      min_y = std::min(min_y, p(1));
      max_x = std::max(max_x, p(0));
      max_y = std::max(max_y, p(1));
    }
  };
  for (const auto& p : observed) extend(p);
  for (const auto& p : truth) extend(p);
  for (const auto& p : predicted) extend(p.second);
  if (min_x > max_x) min_x = min_y = max_x = max_y = 0.0;
  const double span = std::max({max_x - min_x, max_y - min_y, 1e-6});
  const double size = 600.0;
  const Canvas canvas{min_x, min_y, (size - 40.0) / span, size};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
      << "\" viewBox=\"0 0 " << size << ' ' << size << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& p : predicted) {
    svg << "<path class=\"prediction\" d=\"" << path_data(canvas, p.second)
        << "\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1\" stroke-opacity=\"0.35\"/>\n";
  }
  for (const auto& p : truth) {
    svg << "<path class=\"ground-truth\" d=\"" << path_data(canvas, p)
        << "\" fill=\"none\" stroke=\"#2ca02c\" stroke-width=\"2\" stroke-dasharray=\"6 4\"/>\n";
  }
  for (const auto& p : observed) {
    svg << "<path class=\"observed\" d=\"" << path_data(canvas, p)
        << "\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

SampleOutput sample_and_plot(const StGlowModel& model, std::span<const SceneWindow> windows,
                             Index scene_id, Index k, double sigma, const std::string& out_dir) {
  if (scene_id < 0 || scene_id >= static_cast<Index>(windows.size())) {
    throw LookupError("unknown scene id " + std::to_string(scene_id) + " (have " +
                      std::to_string(windows.size()) + " scenes)");
  }
  const SceneWindow& w = windows[static_cast<std::size_t>(scene_id)];
  const auto records = sample_scene(model, w, k, sigma, static_cast<std::uint64_t>(scene_id));
  fs::create_directories(out_dir);
  SampleOutput out;
  const std::string stem = "scene_" + std::to_string(scene_id);
  out.csv_path = (fs::path(out_dir) / (stem + ".csv")).string();
  out.svg_path = (fs::path(out_dir) / (stem + ".svg")).string();
  out.rows = records.size();
  {
    std::ofstream csv(out.csv_path);
    if (!csv) throw DataError("cannot write '" + out.csv_path + "'");
    write_trajectory_csv(csv, records);
  }
  std::ofstream svg(out.svg_path);
  if (!svg) throw DataError("cannot write '" + out.svg_path + "'");
  svg << render_svg(w, records);
  return out;
}

}  // namespace stglow
