// SPDX-License-Identifier: Apache-2.0
#include "stglow/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "stglow/errors.hpp"
#include "stglow/random.hpp"

namespace stglow {

namespace {

double parse_number(const std::string& field, const std::string& where) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = first + field.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw ParseError(where + ": non-numeric field '" + field + "'");
  }
  return v;
}

std::int64_t parse_integral(const std::string& field, const std::string& where) {
  const double v = parse_number(field, where);
  if (v != std::floor(v) || std::abs(v) > 9.0e15) {
    throw ParseError(where + ": expected an integer, got '" + field + "'");
  }
  return static_cast<std::int64_t>(v);
}

}  // namespace

std::vector<RawTrack> parse_eth_ucy(std::istream& in, const std::string& source) {
  std::map<std::int64_t, std::map<std::int64_t, Eigen::RowVector2d>> rows;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<std::string> f;
    std::string tok;
    while (fields >> tok) f.push_back(tok);
    if (f.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    if (f.size() != 4) {
      throw ParseError(where + ": expected 4 fields 'frame ped_id x y', got " +
                       std::to_string(f.size()));
    }
    const std::int64_t frame = parse_integral(f[0], where);
    const std::int64_t ped = parse_integral(f[1], where);
    const Eigen::RowVector2d pos(parse_number(f[2], where), parse_number(f[3], where));
    if (!rows[ped].emplace(frame, pos).second) {
      throw ParseError(where + ": duplicate row for pedestrian " + std::to_string(ped) +
                       " at frame " + std::to_string(frame));
    }
  }
  std::vector<RawTrack> tracks;
  tracks.reserve(rows.size());
  for (const auto& [ped, by_frame] : rows) {
    RawTrack t;
    t.ped_id = ped;
    t.positions.resize(static_cast<Index>(by_frame.size()), 2);
    Index i = 0;
    for (const auto& [frame, pos] : by_frame) {
      t.frames.push_back(frame);
      t.positions.row(i++) = pos;
    }
    tracks.push_back(std::move(t));
  }
  return tracks;
}

std::vector<RawTrack> load_eth_ucy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file '" + path + "'");
  return parse_eth_ucy(in, path);
}

std::int64_t annotation_step(const std::vector<RawTrack>& tracks) {
  std::int64_t g = 0;
  for (const auto& t : tracks) {
    for (std::size_t i = 1; i < t.frames.size(); ++i) g = std::gcd(g, t.frames[i] - t.frames[i - 1]);
  }
  return g == 0 ? 1 : g;
}

std::vector<SceneWindow> window_scenes(const std::vector<RawTrack>& tracks, Index t_o, Index t_p,
                                       Index stride, const std::string& scene) {
  if (t_o < 1 || t_p < 1) throw ContractError("window_scenes: t_o and t_p must be >= 1");
  if (stride < 1) throw ContractError("window_scenes: stride must be >= 1");
  std::vector<SceneWindow> out;
  if (tracks.empty()) return out;
  const std::int64_t step = annotation_step(tracks);
  const Index len = t_o + t_p;
  std::int64_t lo = tracks.front().frames.empty() ? 0 : tracks.front().frames.front();
  std::int64_t hi = lo;
  for (const auto& t : tracks) {
    if (t.frames.empty()) continue;
    lo = std::min(lo, t.frames.front());
    hi = std::max(hi, t.frames.back());
  }
  for (std::int64_t start = lo; start + (len - 1) * step <= hi; start += stride * step) {
    SceneWindow w;
    w.scene = scene;
    w.start_frame = start;
    for (const auto& t : tracks) {
      auto it = std::lower_bound(t.frames.begin(), t.frames.end(), start);
      Matrix traj(len, 2);
      bool present = true;
      for (Index k = 0; k < len && present; ++k, ++it) {
        const std::int64_t frame = start + k * step;
        present = it != t.frames.end() && *it == frame;
        if (present) traj.row(k) = t.positions.row(it - t.frames.begin());
      }
      if (!present) continue;
      w.ped_ids.push_back(t.ped_id);
      w.obs.push_back(traj.topRows(t_o));
      w.fut.push_back(traj.bottomRows(t_p));
    }
    for (Index target = 0; target < w.pedestrians(); ++target) out.push_back(retarget(w, target));
  }
  return out;
}

SceneWindow retarget(const SceneWindow& w, Index target) {
  if (target < 0 || target >= w.pedestrians()) throw ContractError("retarget: target out of range");
  SceneWindow r = w;
  const Eigen::RowVector2d world_origin =
      w.obs[static_cast<std::size_t>(target)].row(w.obs_len() - 1) + w.origin;
  const Eigen::RowVector2d shift = world_origin - w.origin;
  for (auto& o : r.obs) o = o.rowwise() - shift;
  for (auto& f : r.fut) f = f.rowwise() - shift;
  r.origin = world_origin;
  r.target = target;
  // Exact zero regardless of rounding in the subtraction above.
  r.obs[static_cast<std::size_t>(target)].row(w.obs_len() - 1).setZero();
  return r;
}

Matrix denormalize(const Matrix& traj, const Eigen::RowVector2d& origin) {
  return traj.rowwise() + origin;
}

Matrix normalize(const Matrix& traj, const Eigen::RowVector2d& origin) {
  return traj.rowwise() - origin;
}

std::pair<std::vector<SceneWindow>, std::vector<SceneWindow>> leave_one_out_split(
    const std::string& scene_name, const std::vector<NamedScene>& all_scenes) {
  const bool known = std::any_of(all_scenes.begin(), all_scenes.end(),
                                 [&](const NamedScene& s) { return s.name == scene_name; });
  if (!known) throw ConfigError("leave-one-out: unknown scene '" + scene_name + "'");
  std::vector<SceneWindow> train;
  std::vector<SceneWindow> test;
  for (const auto& s : all_scenes) {
    auto& dst = s.name == scene_name ? test : train;
    dst.insert(dst.end(), s.windows.begin(), s.windows.end());
  }
  return {std::move(train), std::move(test)};
}

void write_eth_ucy(std::ostream& out, const std::vector<SceneWindow>& windows,
                   std::int64_t id_stride) {
  std::int64_t frame0 = 0;
  const auto old_precision = out.precision();
  out << std::setprecision(17);
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const SceneWindow& win = windows[w];
    if (win.pedestrians() > id_stride) throw ContractError("write_eth_ucy: id_stride too small");
    const Index to = win.obs_len();
    const Index len = to + win.pred_len();
    for (Index k = 0; k < len; ++k) {
      for (Index j = 0; j < win.pedestrians(); ++j) {
        const auto& src = k < to ? win.obs[static_cast<std::size_t>(j)] : win.fut[static_cast<std::size_t>(j)];
        const Eigen::RowVector2d p = src.row(k < to ? k : k - to) + win.origin;
        out << frame0 + k << ' ' << static_cast<std::int64_t>(w) * id_stride + j << ' ' << p(0)
            << ' ' << p(1) << '\n';
      }
    }
    frame0 += len + 1;  // one empty frame keeps windows apart
  }
  out.precision(old_precision);
}

namespace {

constexpr std::pair<SynthKind, const char*> kKindNames[] = {
    {SynthKind::kStraight, "straight"},
    {SynthKind::kTurn, "turn"},
    {SynthKind::kCrossingPair, "crossing_pair"},
    {SynthKind::kGroupParallel, "group_parallel"},
    {SynthKind::kStopAndGo, "stop_and_go"},
};

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Index uniform_int(Rng& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

Eigen::RowVector2d heading_vector(double angle) { return {std::cos(angle), std::sin(angle)}; }

Matrix straight_path(const Eigen::RowVector2d& p0, double heading, double speed, Index len) {
  Matrix m(len, 2);
  const Eigen::RowVector2d v = speed * heading_vector(heading);
  for (Index t = 0; t < len; ++t) m.row(t) = p0 + static_cast<double>(t) * v;
  return m;
}

Matrix turning_path(const Eigen::RowVector2d& p0, double heading, double speed, double rate,
                    Index len) {
  Matrix m(len, 2);
  m.row(0) = p0;
  for (Index t = 1; t < len; ++t) {
    m.row(t) = m.row(t - 1) + speed * heading_vector(heading + rate * static_cast<double>(t - 1));
  }
  return m;
}

// Independent straight walker starting 3-6 m away from `center`.
Matrix bystander(const Eigen::RowVector2d& center, const SynthSpec& spec, Index len, Rng& rng) {
  const double bearing = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const Eigen::RowVector2d p0 = center + uniform(rng, 3.0, 6.0) * heading_vector(bearing);
  return straight_path(p0, uniform(rng, 0.0, 2.0 * std::numbers::pi),
                       uniform(rng, spec.speed_min, spec.speed_max), len);
}

std::vector<Matrix> synth_walkers(SynthKind kind, const SynthSpec& spec, Rng& rng) {
  const Index len = spec.obs_len + spec.pred_len;
  const Eigen::RowVector2d p0(uniform(rng, -5.0, 5.0), uniform(rng, -5.0, 5.0));
  const double heading = uniform(rng, spec.heading_min, spec.heading_max);
  const double speed = uniform(rng, spec.speed_min, spec.speed_max);
  std::vector<Matrix> walkers;
  bool add_bystanders = true;
  switch (kind) {
    case SynthKind::kStraight:
      walkers.push_back(straight_path(p0, heading, speed, len));
      break;
    case SynthKind::kTurn: {
      const double rate = uniform(rng, spec.turn_rate_min, spec.turn_rate_max) * (uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0);
      walkers.push_back(turning_path(p0, heading, speed, rate, len));
      break;
    }
    case SynthKind::kCrossingPair: {
      // Both walkers reach the crossing point at the same step.
      const Index meet = uniform_int(rng, spec.obs_len, std::max(spec.obs_len, len - 2));
      const double turn = uniform(rng, std::numbers::pi / 3.0, 2.0 * std::numbers::pi / 3.0) *
                          (uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0);
      const double speeds[2] = {speed, uniform(rng, spec.speed_min, spec.speed_max)};
      const double headings[2] = {heading, heading + turn};
      for (int k = 0; k < 2; ++k) {
        const Eigen::RowVector2d v = speeds[k] * heading_vector(headings[k]);
        walkers.push_back(straight_path(p0 - static_cast<double>(meet) * v, headings[k], speeds[k], len));
      }
      add_bystanders = false;
      break;
    }
    case SynthKind::kGroupParallel: {
      const Index members = uniform_int(rng, 2, 3);
      const Eigen::RowVector2d lateral = heading_vector(heading + std::numbers::pi / 2.0);
      for (Index k = 0; k < members; ++k) {
        const double offset = static_cast<double>(k) * uniform(rng, 0.6, 1.0);
        walkers.push_back(straight_path(p0 + offset * lateral, heading, speed, len));
      }
      add_bystanders = false;
      break;
    }
    case SynthKind::kStopAndGo: {
      const Index stop = uniform_int(rng, 2, std::max<Index>(2, len - 6));
      const Index pause = uniform_int(rng, 3, 6);
      const Eigen::RowVector2d v = speed * heading_vector(heading);
      Matrix m(len, 2);
      m.row(0) = p0;
      for (Index t = 1; t < len; ++t) {
        const bool halted = t - 1 >= stop && t - 1 < stop + pause;
        m.row(t) = m.row(t - 1) + (halted ? Eigen::RowVector2d::Zero() : v);
      }
      walkers.push_back(std::move(m));
      break;
    }
  }
  if (add_bystanders) {
    for (Index k = 0; k < spec.neighbors; ++k) walkers.push_back(bystander(p0, spec, len, rng));
  }
  return walkers;
}

}  // namespace

SynthKind parse_synth_kind(const std::string& name) {
  for (const auto& [kind, label] : kKindNames) {
    if (name == label) return kind;
  }
  throw ConfigError("unknown synthetic scene kind '" + name + "'");
}

std::string synth_kind_name(SynthKind kind) {
  for (const auto& [k, label] : kKindNames) {
    if (k == kind) return label;
  }
  return "unknown";
}

bool is_synth_spec(const std::string& text) { return text.rfind("synth:", 0) == 0; }

SynthSpec parse_synth_spec(const std::string& text) {
  if (!is_synth_spec(text)) throw ConfigError("synthetic spec must start with 'synth:'");
  SynthSpec spec;
  std::vector<std::string> parts;
  std::stringstream ss(text.substr(6));
  for (std::string part; std::getline(ss, part, ',');) parts.push_back(part);
  if (parts.empty() || parts.front().empty()) throw ConfigError("synthetic spec names no kind");
  spec.kinds.clear();
  std::stringstream kinds(parts.front());
  for (std::string k; std::getline(kinds, k, '+');) spec.kinds.push_back(parse_synth_kind(k));
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const auto eq = parts[i].find('=');
    if (eq == std::string::npos) throw ConfigError("synthetic spec: expected key=value in '" + parts[i] + "'");
    const std::string key = parts[i].substr(0, eq);
    const std::string value = parts[i].substr(eq + 1);
    try {
      if (key == "count") spec.count = std::stol(value);
      else if (key == "seed") spec.seed = std::stoull(value);
      else if (key == "noise") spec.noise = std::stod(value);
      else if (key == "speed_min") spec.speed_min = std::stod(value);
      else if (key == "speed_max") spec.speed_max = std::stod(value);
      else if (key == "heading_min") spec.heading_min = std::stod(value);
      else if (key == "heading_max") spec.heading_max = std::stod(value);
      else if (key == "turn_rate_min") spec.turn_rate_min = std::stod(value);
      else if (key == "turn_rate_max") spec.turn_rate_max = std::stod(value);
      else if (key == "neighbors") spec.neighbors = std::stol(value);
      else if (key == "obs_len") spec.obs_len = std::stol(value);
      else if (key == "pred_len") spec.pred_len = std::stol(value);
      else throw ConfigError("synthetic spec: unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("synthetic spec: bad value for '" + key + "': '" + value + "'");
    }
  }
  if (spec.count < 0 || spec.noise < 0.0 || spec.neighbors < 0 || spec.obs_len < 2 ||
      spec.pred_len < 1 || spec.speed_min > spec.speed_max || spec.heading_min > spec.heading_max ||
      spec.turn_rate_min < 0.0 || spec.turn_rate_min > spec.turn_rate_max) {
    throw ConfigError("synthetic spec: out-of-range value in '" + text + "'");
  }
  return spec;
}

std::string format_synth_spec(const SynthSpec& spec) {
  std::ostringstream out;
  out << "synth:";
  for (std::size_t i = 0; i < spec.kinds.size(); ++i) out << (i ? "+" : "") << synth_kind_name(spec.kinds[i]);
  out << std::setprecision(17) << ",count=" << spec.count << ",seed=" << spec.seed
      << ",noise=" << spec.noise << ",speed_min=" << spec.speed_min
      << ",speed_max=" << spec.speed_max << ",heading_min=" << spec.heading_min
      << ",heading_max=" << spec.heading_max << ",turn_rate_min=" << spec.turn_rate_min
      << ",turn_rate_max=" << spec.turn_rate_max << ",neighbors=" << spec.neighbors
      << ",obs_len=" << spec.obs_len << ",pred_len=" << spec.pred_len;
  return out.str();
}

std::vector<SceneWindow> synth_scenes(const SynthSpec& spec) {
  if (spec.kinds.empty()) throw ConfigError("synthetic spec names no kind");
  std::vector<SceneWindow> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Index i = 0; i < spec.count; ++i) {
    const SynthKind kind = spec.kinds[static_cast<std::size_t>(i) % spec.kinds.size()];
    Rng rng(stream_seed(spec.seed, static_cast<std::uint64_t>(Stream::kData),
                        static_cast<std::uint64_t>(i)));
    std::vector<Matrix> walkers = synth_walkers(kind, spec, rng);
    SceneWindow w;
    w.scene = "synth";
    w.start_frame = i;
    for (std::size_t j = 0; j < walkers.size(); ++j) {
      Matrix& m = walkers[j];
      if (spec.noise > 0.0) {
        for (Index k = 0; k < m.size(); ++k) m.data()[k] += spec.noise * gauss(rng);
      }
      w.ped_ids.push_back(static_cast<std::int64_t>(j));
      w.obs.push_back(m.topRows(spec.obs_len));
      w.fut.push_back(m.bottomRows(spec.pred_len));
    }
    out.push_back(retarget(w, 0));
  }
  return out;
}

}  // namespace stglow
