// SPDX-License-Identifier: Apache-2.0
#include "stglow/diagnostics.hpp"

#include <Eigen/LU>

#include <cmath>
#include <cstring>
#include <numbers>
#include <ostream>
#include <sstream>

#include "stglow/errors.hpp"
#include "stglow/pipeline.hpp"

namespace stglow {

bool CheckReport::ok() const {
  for (const auto& i : items) {
    if (!i.pass) return false;
  }
  return true;
}

void CheckReport::write(std::ostream& out) const {
  out << "check,status,detail\n";
  for (const auto& i : items) out << i.name << ',' << (i.pass ? "pass" : "fail") << ',' << i.detail << '\n';
}

Matrix numerical_jacobian(const std::function<Matrix(const Matrix&)>& f, const Matrix& x,
                          double step) {
  const Matrix y0 = f(x);
  Matrix jac(y0.size(), x.size());
  for (Index j = 0; j < x.size(); ++j) {
    Matrix xp = x;
    Matrix xm = x;
    xp.data()[j] += step;
    xm.data()[j] -= step;
    const Matrix d = (f(xp) - f(xm)) / (2.0 * step);
    for (Index i = 0; i < d.size(); ++i) jac(i, j) = d.data()[i];
  }
  return jac;
}

double flow_roundtrip_error(const FlowStack& flow, Index samples, Rng& rng) {
  const Index c = flow.channels();
  const Tensor x(randn(samples, c, rng));
  const Tensor st(randn(samples, flow.options().cond_width, rng));
  const Tensor back = flow.reverse(flow.forward(x, st).out, st);
  return (back.value() - x.value()).cwiseAbs().maxCoeff();
}

double flow_logdet_error(const FlowStack& flow, Index samples, Rng& rng) {
  const Index c = flow.channels();
  double worst = 0.0;
  for (Index s = 0; s < samples; ++s) {
    const Matrix x = randn(1, c, rng);
    const Tensor st(randn(1, flow.options().cond_width, rng));
    const double analytic = flow.forward(Tensor(x), st).logdet.item();
    const Matrix jac = numerical_jacobian(
        [&](const Matrix& v) { return flow.forward(Tensor(v), st).out.value(); }, x);
    const double numeric = std::log(std::abs(jac.determinant()));
    worst = std::max(worst, std::abs(analytic - numeric));
  }
  return worst;
}

void randomize_flow(FlowStack& flow, Rng& rng, double scale) {
  for (auto& step : flow.steps()) {
    if (step.norm) {
      const Index c = step.norm->scale().cols();
      Matrix s = rand_uniform(1, c, rng, 0.5, 1.5);
      for (Index i = 0; i < c; ++i) {
        if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.3) s(0, i) = -s(0, i);
      }
      step.norm->scale().mutable_value() = s;
      step.norm->bias().mutable_value() = randn(1, c, rng, scale);
      step.norm->mark_initialized(true);
    }
    const Index c = step.linear.weight().rows();
    step.linear.weight().mutable_value() =
        random_rotation(c, rng) + randn(c, c, rng, 0.1 / std::sqrt(static_cast<double>(c)));
    ParameterSet ps;
    step.coupling.collect(ps, "c");
    // Weights are fan-in scaled so the coupling log-scales stay O(scale)
    // whatever the width; biases (one row) draw at `scale` directly.
    for (auto& [name, t] : ps) {
      const double sd = t.rows() > 1 ? scale / std::sqrt(static_cast<double>(t.rows())) : scale;
      t.mutable_value() = randn(t.rows(), t.cols(), rng, sd);
    }
  }
}

GradientCheckResult gradient_check(ParameterSet& params, const std::function<Tensor()>& loss,
                                   Index max_entries, double rel_tol, double abs_floor,
                                   double step) {
  params.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(loss());
  }
  GradientCheckResult r;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = params[p];
    const Matrix analytic = t.grad();
    const Index n = max_entries < 0 ? t.size() : std::min(max_entries, t.size());
    for (Index e = 0; e < n; ++e) {
      // Spread the checked entries over the tensor.
      const Index i = n == t.size() ? e : (e * t.size()) / n;
      double& v = t.mutable_value().data()[i];
      const double saved = v;
      v = saved + step;
      const double up = loss().item();
      v = saved - step;
      const double down = loss().item();
      v = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic.data()[i];
      const double err = std::abs(a - numeric);
      const double bound = std::max(rel_tol * std::max(std::abs(a), std::abs(numeric)), abs_floor);
      ++r.checked;
      const double rel = err / std::max({std::abs(a), std::abs(numeric), abs_floor});
      if (err > bound) ++r.failed;
      if (rel > r.worst_rel) {
        r.worst_rel = rel;
        r.worst_name = params.name(p) + "[" + std::to_string(i) + "]";
      }
    }
  }
  params.zero_grad();
  return r;
}

namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << std::scientific << v;
  return s.str();
}

Config tiny_config(std::uint64_t seed) {
  Config c = Config::toy();
  c.seed = seed;
  c.model.width = 16;
  c.model.heads = 2;
  c.model.channels = 8;
  c.model.flow_steps = 2;
  c.model.coupling_hidden = 16;
  c.model.decoder_hidden = 8;
  c.model.pred_len = 3;
  c.train.k = 2;
  return c;
}

void guarded(CheckReport& report, const std::string& name,
             const std::function<CheckItem()>& body) {
  try {
    CheckItem item = body();
    item.name = name;
    report.items.push_back(std::move(item));
  } catch (const std::exception& e) {
    report.items.push_back({name, false, std::string("error: ") + e.what()});
  }
}

}  // namespace

CheckReport run_checks(const std::string* ckpt_path, std::uint64_t seed) {
  CheckReport report;
  std::unique_ptr<StGlowModel> model;
  if (ckpt_path != nullptr) {
    guarded(report, "checkpoint_load", [&] {
      const Checkpoint c = load_checkpoint(*ckpt_path);
      model = load_model(c);
      return CheckItem{"", true, std::to_string(c.parameters.size()) + " parameters"};
    });
  }
  if (!model) {
    Config c = Config::toy();
    c.seed = seed;
    model = std::make_unique<StGlowModel>(c);
    Rng init = make_rng(seed, Stream::kCheck, 0);
    randomize_flow(model->flow(), init);
  }
  Rng rng = make_rng(seed, Stream::kCheck, 1);

  guarded(report, "checkpoint_roundtrip", [&] {
    const Checkpoint a = capture(*model);
    const Checkpoint b = deserialize_checkpoint(serialize_checkpoint(a));
    for (std::size_t i = 0; i < a.parameters.size(); ++i) {
      const Matrix& x = a.parameters[i].value;
      const Matrix& y = b.parameters[i].value;
      if (x.size() != y.size() || std::memcmp(x.data(), y.data(), sizeof(double) * x.size()) != 0) {
        return CheckItem{"", false, "parameter " + a.parameters[i].name + " differs"};
      }
    }
    return CheckItem{"", true, "bit-exact"};
  });

  guarded(report, "flow_invertibility", [&] {
    if (!model->flow_initialized()) {
      return CheckItem{"", true, "skipped: pattern normalization not initialized"};
    }
    const double err = flow_roundtrip_error(model->flow(), 100, rng);
    return CheckItem{"", err < 1e-9, "max error " + fmt(err)};
  });

  guarded(report, "flow_logdet_oracle", [&] {
    FlowOptions o;
    o.channels = 4;
    o.steps = 2;
    o.cond_width = 3;
    o.hidden = 8;
    Rng init = make_rng(seed, Stream::kCheck, 2);
    FlowStack flow(o, init);
    randomize_flow(flow, init);
    const double err = flow_logdet_error(flow, 5, rng);
    return CheckItem{"", err < 1e-4, "max error " + fmt(err)};
  });

  guarded(report, "pattern_norm_init", [&] {
    PatternNorm pn(6);
    const Matrix batch = (randn(256, 6, rng) * 3.0).array() + 2.0;
    pn.initialize(batch);
    const Matrix y = pn.forward(Tensor(batch)).out.value();
    const Eigen::RowVectorXd mean = y.colwise().mean();
    const Eigen::RowVectorXd sd = ((y.rowwise() - mean).array().square().colwise().mean()).sqrt();
    const double dm = mean.cwiseAbs().maxCoeff();
    const double ds = (sd.array() - 1.0).abs().maxCoeff();
    return CheckItem{"", dm < 1e-9 && ds < 1e-6, "mean " + fmt(dm) + " std " + fmt(ds)};
  });

  guarded(report, "base_nll_anchor", [&] {
    const BaseDensity base{2, 1.0};
    const double nll = -base.log_prob(Tensor::zeros(1, 2)).item();
    const double err = std::abs(nll - std::log(2.0 * std::numbers::pi));
    return CheckItem{"", err < 1e-10, "error " + fmt(err)};
  });

  guarded(report, "attention_masks", [&] {
    const EncoderOptions& eo = model->encoder().options();
    const auto* tg = dynamic_cast<const TemporalGraphormer*>(&model->encoder().history_encoder());
    Index violations = 0;
    if (tg != nullptr && eo.temporal.use_mask) {
      AttentionTrace trace;
      (*tg)(Tensor(randn(3 * eo.obs_len, 2, rng)), eo.obs_len, &trace);
      for (const auto& g : trace)
        for (const auto& h : g)
          for (Index i = 0; i < h.rows(); ++i)
            for (Index j = i + 1; j < h.cols(); ++j) violations += h(i, j) != 0.0;
    }
    if (eo.use_spatial && eo.spatial.use_fov_mask) {
      SpatialGroup g;
      g.prev = randn(5, 2, rng);
      g.now = g.prev + randn(5, 2, rng, 0.5);
      g.target = 0;
      const SpatialGraph sg = build_spatial_adjacency(g.prev, g.now);
      AttentionTrace trace;
      model->encoder().spatial()({&g, 1}, Tensor(randn(5, eo.temporal.width, rng)), &trace);
      for (const auto& h : trace.front())
        for (Index i = 0; i < h.rows(); ++i)
          for (Index j = 0; j < h.cols(); ++j) violations += is_masked(sg.adjacency(i, j)) && h(i, j) != 0.0;
    }
    return CheckItem{"", violations == 0, std::to_string(violations) + " nonzero masked weights"};
  });

  guarded(report, "gradient_check", [&] {
    const Config c = tiny_config(seed);
    StGlowModel tiny(c);
    SynthSpec spec;
    spec.kinds = {SynthKind::kStraight, SynthKind::kCrossingPair};
    spec.count = 2;
    spec.seed = seed;
    spec.obs_len = c.model.obs_len;
    spec.pred_len = c.model.pred_len;
    const auto windows = synth_scenes(spec);
    tiny.initialize_flow(windows);
    SampleSource src;
    src.seed = 7;
    src.stream_ids = {0, 1};
    const auto r = gradient_check(
        tiny.parameters(), [&] { return tiny.losses(windows, c.train.k, 1.0, src).total; }, 3,
        1e-3, 1e-8, 1e-5);
    return CheckItem{"", r.failed == 0,
                     std::to_string(r.failed) + "/" + std::to_string(r.checked) +
                         " entries off; worst " + fmt(r.worst_rel) + " at " + r.worst_name};
  });
  return report;
}

}  // namespace stglow
