// SPDX-License-Identifier: Apache-2.0
// Command-line entry point: train, eval, sample, check.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "stglow/diagnostics.hpp"
#include "stglow/errors.hpp"
#include "stglow/pipeline.hpp"

using namespace stglow;

namespace {

Config config_from(const std::string& path, const std::vector<std::string>& overrides) {
  Config c = path.empty() ? Config::paper() : Config::load(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  apply_env_overrides(c);
  c.validate();
  return c;
}

// Model plus the config it was trained with, seed overridable by STGLOW_SEED.
std::unique_ptr<StGlowModel> model_from(const std::string& ckpt_path) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  Config c = checkpoint_config(ckpt);
  apply_env_overrides(c);
  auto model = std::make_unique<StGlowModel>(c);
  restore(*model, ckpt);
  return model;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal flow model for pedestrian trajectory prediction"};
  app.require_subcommand(1);

  std::string config_path, resume, ckpt, data, out_dir = "samples", csv_path;
  std::vector<std::string> overrides;
  Index k = -1, scene = 0;
  double sigma = -1.0;

  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", config_path, "config file (dotted keys)")->required();
  train_cmd->add_option("--resume", resume, "checkpoint to resume from");
  train_cmd->add_option("--set", overrides, "override a config key, key=value");

  auto* eval_cmd = app.add_subcommand("eval", "best-of-K ADE/FDE of a checkpoint");
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", data, "dataset file or synth:... spec; default: configured test set");
  eval_cmd->add_option("--k", k, "samples per target");
  eval_cmd->add_option("--sigma", sigma, "base-distribution temperature");
  eval_cmd->add_option("--csv", csv_path, "also write the metrics table here");

  auto* sample_cmd = app.add_subcommand("sample", "sample futures for one scene, write CSV and SVG");
  sample_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
  sample_cmd->add_option("--scene", scene, "scene window index")->required();
  sample_cmd->add_option("--k", k, "samples per pedestrian");
  sample_cmd->add_option("--sigma", sigma, "base-distribution temperature");
  sample_cmd->add_option("--out", out_dir, "output directory");
  sample_cmd->add_option("--data", data, "dataset file or synth:... spec; default: configured test set");

  auto* check_cmd = app.add_subcommand("check", "run the self-check suite");
  check_cmd->add_option("--ckpt", ckpt, "checkpoint to check; default: fresh toy model");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const Config c = config_from(config_path, overrides);
      TrainOptions opt;
      opt.resume_path = resume;
      opt.log = &std::cout;
      const TrainResult r = train(c, opt);
      std::cout << "checkpoints in " << c.train.out_dir << " (last.ckpt, best.ckpt)\n";
      return r.history.empty() && c.train.epochs > 0 && resume.empty() ? 1 : 0;
    }
    if (*eval_cmd) {
      auto model = model_from(ckpt);
      const Config& c = model->config();
      const auto windows = data.empty() ? test_windows(c) : load_windows(data, c);
      const EvalReport rep =
          evaluate(*model, windows, k > 0 ? k : c.eval.k, sigma >= 0.0 ? sigma : c.eval.sigma, c.eval.batch);
      rep.write_csv(std::cout);
      if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        if (!out) throw DataError("cannot write '" + csv_path + "'");
        rep.write_csv(out);
      }
      return 0;
    }
    if (*sample_cmd) {
      auto model = model_from(ckpt);
      const Config& c = model->config();
      const auto windows = data.empty() ? test_windows(c) : load_windows(data, c);
      const SampleOutput out = sample_and_plot(*model, windows, scene, k > 0 ? k : c.eval.k,
                                               sigma >= 0.0 ? sigma : c.eval.sigma, out_dir);
      std::cout << "wrote " << out.rows << " rows to " << out.csv_path << " and " << out.svg_path << '\n';
      return 0;
    }
    if (*check_cmd) {
      Config seed_source = Config::toy();
      apply_env_overrides(seed_source);
      const CheckReport rep = run_checks(ckpt.empty() ? nullptr : &ckpt, seed_source.seed);
      rep.write(std::cout);
      return rep.ok() ? 0 : 1;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
