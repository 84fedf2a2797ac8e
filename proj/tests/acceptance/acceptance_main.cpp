// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Reference values come from tests/oracles.hpp, never from
// the library code under test.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "stglow/checkpoint.hpp"
#include "stglow/config.hpp"
#include "stglow/data.hpp"
#include "stglow/diagnostics.hpp"
#include "stglow/flow.hpp"
#include "stglow/graphormer.hpp"
#include "stglow/metrics.hpp"
#include "stglow/model.hpp"
#include "stglow/pipeline.hpp"
#include "stglow/random.hpp"

namespace {

using namespace stglow;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

bool same_parameters(const Checkpoint& a, const Checkpoint& b) {
  if (a.parameters.size() != b.parameters.size()) return false;
  for (std::size_t i = 0; i < a.parameters.size(); ++i)
    if (a.parameters[i].name != b.parameters[i].name ||
        !bit_equal(a.parameters[i].value, b.parameters[i].value))
      return false;
  return true;
}

FlowOptions small_flow(Index channels, Index steps, Index cond, Index hidden) {
  FlowOptions o;
  o.channels = channels;
  o.steps = steps;
  o.cond_width = cond;
  o.hidden = hidden;
  return o;
}

// ---------------------------------------------------------------------------

Outcome flow_invertibility() {
  const auto t0 = Clock::now();
  const Config c = Config::toy();
  FlowOptions fo = flow_options(c);
  double worst = 0.0;
  std::mt19937_64 data(101);
  for (int draw = 0; draw < 10; ++draw) {
    Rng rng(make_rng(1000 + draw, Stream::kCheck, 0));
    FlowStack flow(fo, rng);
    randomize_flow(flow, rng);
    const Matrix x = oracle::gaussian(100, fo.channels, data);
    const Matrix st = oracle::gaussian(100, fo.cond_width, data);
    const Matrix z = flow.forward(Tensor(x), Tensor(st)).out.value();
    const Matrix back = flow.reverse(Tensor(z), Tensor(st)).value();
    worst = std::max(worst, (back - x).cwiseAbs().maxCoeff());
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-9 && secs < 10.0,
          "C=" + std::to_string(fo.channels) + " max|x - reverse(forward(x))| = " + num(worst) +
              ", " + num(secs) + " s"};
}

Outcome logdet_oracle() {
  const auto t0 = Clock::now();
  const FlowOptions fo = small_flow(4, 2, 3, 8);
  double worst = 0.0;
  std::mt19937_64 data(202);
  for (int draw = 0; draw < 20; ++draw) {
    Rng rng(make_rng(2000 + draw, Stream::kCheck, 0));
    FlowStack flow(fo, rng);
    randomize_flow(flow, rng);
    for (int s = 0; s < 5; ++s) {
      const Matrix x = oracle::gaussian(1, 4, data);
      const Matrix st = oracle::gaussian(1, 3, data);
      const double analytic = flow.forward(Tensor(x), Tensor(st)).logdet.value()(0, 0);
      const Matrix jac = oracle::jacobian(
          [&](const Matrix& v) { return flow.forward(Tensor(v), Tensor(st)).out.value(); }, x);
      const double numeric = std::log(std::abs(oracle::det_cofactor(jac)));
      worst = std::max(worst, std::abs(analytic - numeric));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 30.0,
          "max |logdet - log|det J|| = " + num(worst) + " over 20 draws x 5 inputs, " +
              num(secs) + " s"};
}

Outcome pn_init_contract() {
  const Config c = Config::toy();
  const FlowOptions fo = flow_options(c);
  Rng rng(make_rng(3, Stream::kCheck, 0));
  FlowStack flow(fo, rng);
  std::mt19937_64 data(303);
  Matrix x = oracle::gaussian(256, fo.channels, data);
  for (Index j = 0; j < x.cols(); ++j) x.col(j) = x.col(j) * (0.1 + 0.2 * j) + Matrix::Constant(256, 1, 3.0 - j);
  const Matrix st = oracle::gaussian(256, fo.cond_width, data);
  flow.initialize(x, st);

  // Every normalization in the chain sees its own input normalized.
  double worst_mean = 0.0, worst_std = 0.0;
  Tensor h(x);
  for (const FlowStep& step : flow.steps()) {
    const Matrix y = step.norm->forward(h).out.value();
    for (Index j = 0; j < y.cols(); ++j) {
      const double mean = y.col(j).mean();
      const double var = (y.col(j).array() - mean).square().mean();
      worst_mean = std::max(worst_mean, std::abs(mean));
      worst_std = std::max(worst_std, std::abs(std::sqrt(var) - 1.0));
    }
    h = step.coupling.forward(step.linear.forward(Tensor(y)).out, Tensor(st)).out;
  }
  return {worst_mean < 1e-9 && worst_std < 1e-6,
          std::to_string(flow.steps().size()) + " normalizations, max|mean| = " +
              num(worst_mean) + ", max|std - 1| = " + num(worst_std)};
}

// A one-step flow with unit normalization and identity linear map; the
// fresh coupling is the identity by construction.
std::unique_ptr<FlowStack> identity_flow(Index channels) {
  Rng rng(make_rng(4, Stream::kCheck, channels));
  auto flow = std::make_unique<FlowStack>(small_flow(channels, 1, 2, 8), rng);
  FlowStep& step = flow->steps().front();
  step.norm->scale().mutable_value().setOnes();
  step.norm->bias().mutable_value().setZero();
  step.norm->mark_initialized(true);
  step.linear.weight().mutable_value().setIdentity();
  return flow;
}

Outcome base_nll_anchor() {
  const double log2pi = std::log(2.0 * M_PI);
  const auto two = identity_flow(2);
  const double at_zero = nll_loss(Tensor(Matrix::Zero(1, 2)), Tensor(Matrix::Zero(1, 2)), *two).item();
  const double anchor_err = std::abs(at_zero - log2pi);

  std::string mc;
  bool mc_ok = true;
  std::mt19937_64 data(404);
  for (Index ch : {Index{2}, Index{32}}) {
    const auto flow = identity_flow(ch);
    const Matrix x = oracle::gaussian(100000, ch, data);
    const double nll = nll_loss(Tensor(x), Tensor(Matrix::Zero(x.rows(), 2)), *flow).item();
    const double expected = 0.5 * ch * (1.0 + log2pi);
    const double rel = std::abs(nll - expected) / expected;
    mc_ok = mc_ok && rel < 0.02;
    mc += ", C=" + std::to_string(ch) + " Monte-Carlo rel err " + num(rel);
  }
  return {anchor_err < 1e-10 && mc_ok, "|L(0) - log 2pi| = " + num(anchor_err) + mc};
}

Config gradient_config() {
  Config c = Config::toy();
  c.model.width = 16;
  c.model.heads = 2;
  c.model.channels = 8;
  c.model.flow_steps = 2;
  c.model.coupling_hidden = 16;
  c.model.decoder_hidden = 8;
  c.model.pred_len = 3;
  c.train.k = 2;
  c.seed = 5;
  return c;
}

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  const Config c = gradient_config();
  StGlowModel model(c);
  SynthSpec spec;
  spec.kinds = {SynthKind::kStraight, SynthKind::kTurn, SynthKind::kCrossingPair};
  spec.count = 3;
  spec.seed = 5;
  spec.obs_len = c.model.obs_len;
  spec.pred_len = c.model.pred_len;
  const auto windows = synth_scenes(spec);
  model.initialize_flow(windows);
  // Push the flow off its identity start so every coupling weight matters.
  Rng perturb(make_rng(5, Stream::kCheck, 1));
  randomize_flow(model.flow(), perturb, 0.1);
  SampleSource src;
  src.seed = 11;
  for (std::size_t i = 0; i < windows.size(); ++i) src.stream_ids.push_back(i);
  ParameterSet& params = model.parameters();
  const auto loss = [&] { return model.losses(windows, c.train.k, 1.0, src).total; };

  params.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(loss());
  }
  const double h = 1e-5;
  Index checked = 0, failed = 0;
  std::string first_bad;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = params[p];
    const Matrix analytic = t.grad();
    for (Index i = 0; i < t.size(); ++i) {
      double& v = t.mutable_value().data()[i];
      const double saved = v;
      v = saved + h;
      const double up = loss().item();
      v = saved - h;
      const double down = loss().item();
      v = saved;
      ++checked;
      if (!oracle::grad_close(analytic.data()[i], (up - down) / (2.0 * h))) {
        if (failed++ == 0) first_bad = params.name(p) + "[" + std::to_string(i) + "]";
      }
    }
  }
  const double secs = seconds_since(t0);
  return {failed == 0 && secs < 300.0,
          std::to_string(failed) + "/" + std::to_string(checked) + " entries off" +
              (failed ? " (first " + first_bad + ")" : std::string()) + ", " + num(secs) + " s"};
}

Outcome mask_correctness() {
  const Config c = Config::toy();
  const StGlowModel model(c);
  const DualGraphormer& enc = model.encoder();
  std::mt19937_64 data(606);
  Index temporal_upper = 0, temporal_nonzero = 0, fov_masked = 0, fov_nonzero = 0;
  for (int scene = 0; scene < 50; ++scene) {
    const Index n = 2 + scene % 5;
    const Index steps = c.model.obs_len + c.model.pred_len;
    // Random-walk trajectories with a shared random drift per walker.
    Matrix trajs(n * steps, 2);
    for (Index m = 0; m < n; ++m) {
      Eigen::RowVector2d p = oracle::gaussian(1, 2, data, 3.0);
      const Eigen::RowVector2d v = oracle::gaussian(1, 2, data, 0.5);
      for (Index t = 0; t < steps; ++t) {
        trajs.row(m * steps + t) = p;
        p += v + oracle::gaussian(1, 2, data, 0.1);
      }
    }
    for (const TemporalEncoder* te : {&enc.behavior_encoder(), &enc.history_encoder()}) {
      const Index len = te == &enc.behavior_encoder() ? steps : c.model.obs_len;
      Matrix in(n * len, 2);
      for (Index m = 0; m < n; ++m) in.middleRows(m * len, len) = trajs.middleRows(m * steps, len);
      AttentionTrace trace;
      (*te)(Tensor(in), len, &trace);
      for (const auto& group : trace)
        for (const Matrix& w : group)
          for (Index i = 0; i < w.rows(); ++i)
            for (Index j = i + 1; j < w.cols(); ++j) {
              ++temporal_upper;
              temporal_nonzero += w(i, j) != 0.0;
            }
    }
    SpatialGroup g;
    g.prev.resize(n, 2);
    g.now.resize(n, 2);
    for (Index m = 0; m < n; ++m) {
      g.prev.row(m) = trajs.row(m * steps + c.model.obs_len - 2);
      g.now.row(m) = trajs.row(m * steps + c.model.obs_len - 1);
    }
    g.target = scene % n;
    const Matrix adj = build_spatial_adjacency(g.prev, g.now).adjacency;
    AttentionTrace trace;
    enc.spatial()({&g, 1}, Tensor(oracle::gaussian(n, c.model.width, data)), &trace);
    for (const auto& layer : trace)
      for (const Matrix& w : layer)
        for (Index i = 0; i < n; ++i)
          for (Index j = 0; j < n; ++j)
            if (is_masked(adj(i, j))) {
              ++fov_masked;
              fov_nonzero += w(i, j) != 0.0;
            }
  }
  return {temporal_nonzero == 0 && fov_nonzero == 0 && temporal_upper > 0 && fov_masked > 0,
          "temporal future weights nonzero " + std::to_string(temporal_nonzero) + "/" +
              std::to_string(temporal_upper) + ", FOV-masked weights nonzero " +
              std::to_string(fov_nonzero) + "/" + std::to_string(fov_masked)};
}

Outcome metric_anchors() {
  const Matrix gt = Matrix::Random(12, 2);
  Matrix shifted = gt;
  shifted.col(0).array() += 1.0;
  const bool anchors = ade(gt, gt) == 0.0 && fde(gt, gt) == 0.0 && ade(shifted, gt) == 1.0 &&
                       fde(shifted, gt) == 1.0;
  std::mt19937_64 data(707);
  Index violations = 0, oracle_mismatch = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const Matrix truth = oracle::gaussian(12, 2, data);
    std::vector<Matrix> preds;
    for (int k = 0; k < 20; ++k) preds.push_back(oracle::gaussian(12, 2, data));
    double prev_ade = std::numeric_limits<double>::infinity(), prev_fde = prev_ade;
    double ref_ade = prev_ade, ref_fde = prev_fde;
    for (std::size_t k = 1; k <= preds.size(); ++k) {
      const BestOfK r = best_of_k({preds.data(), k}, truth);
      violations += r.ade > prev_ade || r.fde > prev_fde;
      ref_ade = std::min(ref_ade, oracle::ade_direct(preds[k - 1], truth));
      ref_fde = std::min(ref_fde, oracle::fde_direct(preds[k - 1], truth));
      oracle_mismatch += std::abs(r.ade - ref_ade) > 1e-12 || std::abs(r.fde - ref_fde) > 1e-12;
      prev_ade = r.ade;
      prev_fde = r.fde;
    }
  }
  return {anchors && violations == 0 && oracle_mismatch == 0,
          std::string("anchors ") + (anchors ? "exact" : "wrong") + ", monotonicity violations " +
              std::to_string(violations) + ", oracle mismatches " + std::to_string(oracle_mismatch) +
              " over 100 instances"};
}

// Constant-velocity extrapolation from the last observed step.
Matrix linear_extrapolation(const Matrix& obs, Index pred_len) {
  const Eigen::RowVector2d last = obs.row(obs.rows() - 1);
  const Eigen::RowVector2d v = last - obs.row(obs.rows() - 2);
  Matrix out(pred_len, 2);
  for (Index t = 0; t < pred_len; ++t) out.row(t) = last + static_cast<double>(t + 1) * v;
  return out;
}

double oracle_ade(const std::vector<SceneWindow>& windows) {
  double sum = 0.0;
  for (const SceneWindow& w : windows)
    sum += oracle::ade_direct(linear_extrapolation(w.obs[w.target], w.pred_len()), w.fut[w.target]);
  return sum / static_cast<double>(windows.size());
}

struct Trained {
  Config config;
  std::unique_ptr<StGlowModel> model;
  std::vector<SceneWindow> test;
};

Outcome desk_scale_learning(Trained& out) {
  Config c = Config::toy();
  c.train.out_dir = (std::filesystem::temp_directory_path() / "stglow_acceptance").string();

  SynthSpec straight = synth_spec_for("synth:straight,count=64,seed=3,noise=0", c);
  const double oracle_noiseless = oracle_ade(synth_scenes(straight));
  if (!(oracle_noiseless < 0.02))
    return {false, "linear-extrapolation oracle " + num(oracle_noiseless) + " on noiseless straight"};
  const double threshold = 2.5 * 0.02;

  const auto t0 = Clock::now();
  const auto train_set = load_windows(c.data.synth, c);
  TrainOptions opts;
  opts.write_checkpoints = false;
  const TrainResult r = train(c, train_set, opts);
  out.config = c;
  out.model = load_model(r.best);
  out.test = load_windows(c.data.test_synth, c);
  const EvalReport rep = evaluate(*out.model, out.test, 20, 1.0);
  const double secs = seconds_since(t0);
  const double model_ade = rep.average().ade;
  return {model_ade < threshold && secs < 300.0,
          "oracle " + num(oracle_noiseless) + " on noiseless straight (" +
              num(oracle_ade(out.test)) + " on the test scenes); model best-of-20 ADE " +
              num(model_ade) + " vs threshold " + num(threshold) + " after " +
              std::to_string(r.history.size()) + " epochs, " + num(secs) + " s"};
}

double spread(const std::vector<Matrix>& samples) {
  double sum = 0.0;
  Index pairs = 0;
  for (std::size_t a = 0; a < samples.size(); ++a)
    for (std::size_t b = a + 1; b < samples.size(); ++b, ++pairs)
      sum += (samples[a] - samples[b]).rowwise().norm().mean();
  return pairs ? sum / static_cast<double>(pairs) : 0.0;
}

Outcome diversity(const Trained& t) {
  if (!t.model) return {false, "no trained model"};
  SampleSource src;
  src.seed = evaluation_seed(t.config);
  for (std::size_t i = 0; i < t.test.size(); ++i) src.stream_ids.push_back(i);
  const auto wide = t.model->predict(t.test, 20, 1.0, src);
  const auto flat = t.model->predict(t.test, 20, 0.0, src);
  Index greater = 0;
  for (std::size_t i = 0; i < t.test.size(); ++i) greater += spread(wide[i]) > spread(flat[i]);
  const double share = static_cast<double>(greater) / static_cast<double>(t.test.size());
  return {share >= 0.95, "sigma=1 spread exceeds sigma=0 on " + std::to_string(greater) + "/" +
                             std::to_string(t.test.size()) + " scenes (" + num(100 * share) + "%)"};
}

Outcome determinism() {
  Config c = Config::toy();
  c.model.width = 8;
  c.model.heads = 2;
  c.model.channels = 8;
  c.model.flow_steps = 2;
  c.model.coupling_hidden = 8;
  c.model.decoder_hidden = 8;
  c.train.batch = 4;
  c.train.k = 3;
  c.train.epochs = 3;
  c.data.synth = "synth:straight+turn,count=12,seed=1";
  c.seed = 9;
  const auto windows = load_windows(c.data.synth, c);
  TrainOptions mem;
  mem.write_checkpoints = false;

  const TrainResult full = train(c, windows, mem);
  TrainOptions first = mem;
  first.max_epochs = 1;
  const TrainResult part = train(c, windows, first);
  // The partial state goes through bytes, as a real resume would.
  const Checkpoint reloaded = deserialize_checkpoint(serialize_checkpoint(part.last));
  TrainOptions rest = mem;
  rest.resume = &reloaded;
  const TrainResult resumed = train(c, windows, rest);
  const bool resume_ok = serialize_checkpoint(resumed.last) == serialize_checkpoint(full.last);

  const auto path = std::filesystem::temp_directory_path() / "stglow_acceptance_rt.ckpt";
  save_checkpoint(path.string(), full.last);
  const Checkpoint loaded = load_checkpoint(path.string());
  std::filesystem::remove(path);
  const auto model = load_model(loaded);
  const bool save_ok = same_parameters(loaded, full.last) && same_parameters(capture(*model), full.last);

  const auto test = load_windows("synth:straight+turn,count=8,seed=2", c);
  const EvalReport a = evaluate(*model, test, 5, 1.0, 64);
  const EvalReport b = evaluate(*model, test, 5, 1.0, 64);
  const EvalReport d = evaluate(*load_model(full.last), test, 5, 1.0, 3);
  bool eval_ok = a.instances.size() == b.instances.size() && a.instances.size() == d.instances.size();
  for (std::size_t i = 0; eval_ok && i < a.instances.size(); ++i)
    eval_ok = a.instances[i].ade == b.instances[i].ade && a.instances[i].fde == b.instances[i].fde &&
              a.instances[i].ade == d.instances[i].ade && a.instances[i].fde == d.instances[i].fde;
  return {resume_ok && save_ok && eval_ok,
          std::string("run-vs-resume ") + (resume_ok ? "identical" : "differs") + ", save/load " +
              (save_ok ? "bit-exact" : "differs") + ", evaluation " +
              (eval_ok ? "reproducible" : "differs")};
}

}  // namespace

int main() {
  Trained trained;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"flow invertibility", flow_invertibility},
      {"log-det oracle", logdet_oracle},
      {"normalization init", pn_init_contract},
      {"base NLL anchor", base_nll_anchor},
      {"gradient fidelity", gradient_fidelity},
      {"mask correctness", mask_correctness},
      {"metric anchors", metric_anchors},
      {"desk-scale learning", [&] { return desk_scale_learning(trained); }},
      {"diversity", [&] { return diversity(trained); }},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %2zu %-20s %s  %s\n", i + 1, criteria[i].first.c_str(),
                o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
