// SPDX-License-Identifier: Apache-2.0
#include "stglow/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include "stglow/errors.hpp"

namespace stglow {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

Index to_index(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return static_cast<Index>(out);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long out = 0;
  try {
    if (!v.empty() && v[0] != '-') out = std::stoull(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) {
    throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::string from_double(double d) {
  std::ostringstream s;
  s << std::setprecision(17) << d;
  return s.str();
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
  return out;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string p; std::getline(ss, p, ',');) {
    p = trim(p);
    if (!p.empty()) out.push_back(p);
  }
  return out;
}

struct Field {
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&, const std::string&)> set;
};

template <typename T>
Field index_field(T Config::*group, Index T::*member) {
  return {[=](const Config& c) { return std::to_string((c.*group).*member); },
          [=](Config& c, const std::string& k, const std::string& v) { (c.*group).*member = to_index(k, v); }};
}

template <typename T>
Field double_field(T Config::*group, double T::*member) {
  return {[=](const Config& c) { return from_double((c.*group).*member); },
          [=](Config& c, const std::string& k, const std::string& v) { (c.*group).*member = to_double(k, v); }};
}

template <typename T>
Field bool_field(T Config::*group, bool T::*member) {
  return {[=](const Config& c) { return std::string((c.*group).*member ? "true" : "false"); },
          [=](Config& c, const std::string& k, const std::string& v) { (c.*group).*member = to_bool(k, v); }};
}

template <typename T>
Field string_field(T Config::*group, std::string T::*member) {
  return {[=](const Config& c) { return (c.*group).*member; },
          [=](Config& c, const std::string&, const std::string& v) { (c.*group).*member = v; }};
}

Field loss_field(double LossWeights::*member) {
  return {[=](const Config& c) { return from_double(c.train.loss.*member); },
          [=](Config& c, const std::string& k, const std::string& v) { c.train.loss.*member = to_double(k, v); }};
}

const std::vector<std::pair<std::string, Field>>& field_table() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"seed",
       {[](const Config& c) { return std::to_string(c.seed); },
        [](Config& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); }}},
      {"model.width", index_field(&Config::model, &ModelConfig::width)},
      {"model.heads", index_field(&Config::model, &ModelConfig::heads)},
      {"model.channels", index_field(&Config::model, &ModelConfig::channels)},
      {"model.flow_steps", index_field(&Config::model, &ModelConfig::flow_steps)},
      {"model.coupling_hidden", index_field(&Config::model, &ModelConfig::coupling_hidden)},
      {"model.factor_out", bool_field(&Config::model, &ModelConfig::factor_out)},
      {"model.factor_channels", index_field(&Config::model, &ModelConfig::factor_channels)},
      {"model.factor_every", index_field(&Config::model, &ModelConfig::factor_every)},
      {"model.log_scale_clamp", double_field(&Config::model, &ModelConfig::log_scale_clamp)},
      {"model.decoder_hidden", index_field(&Config::model, &ModelConfig::decoder_hidden)},
      {"model.obs_len", index_field(&Config::model, &ModelConfig::obs_len)},
      {"model.pred_len", index_field(&Config::model, &ModelConfig::pred_len)},
      {"model.use_spatial", bool_field(&Config::model, &ModelConfig::use_spatial)},
      {"model.gru_temporal", bool_field(&Config::model, &ModelConfig::gru_temporal)},
      {"model.use_pn", bool_field(&Config::model, &ModelConfig::use_pn)},
      {"model.bidirectional", bool_field(&Config::model, &ModelConfig::bidirectional)},
      {"model.use_centrality", bool_field(&Config::model, &ModelConfig::use_centrality)},
      {"model.use_positional", bool_field(&Config::model, &ModelConfig::use_positional)},
      {"model.use_mask", bool_field(&Config::model, &ModelConfig::use_mask)},
      {"model.use_position", bool_field(&Config::model, &ModelConfig::use_position)},
      {"model.use_steering", bool_field(&Config::model, &ModelConfig::use_steering)},
      {"model.use_fov_mask", bool_field(&Config::model, &ModelConfig::use_fov_mask)},
      {"train.batch", index_field(&Config::train, &TrainConfig::batch)},
      {"train.lr", double_field(&Config::train, &TrainConfig::lr)},
      {"train.beta1", double_field(&Config::train, &TrainConfig::beta1)},
      {"train.beta2", double_field(&Config::train, &TrainConfig::beta2)},
      {"train.weight_decay", double_field(&Config::train, &TrainConfig::weight_decay)},
      {"train.epochs", index_field(&Config::train, &TrainConfig::epochs)},
      {"train.k", index_field(&Config::train, &TrainConfig::k)},
      {"train.sigma", double_field(&Config::train, &TrainConfig::sigma)},
      {"train.loss.alpha", loss_field(&LossWeights::goal)},
      {"train.loss.lambda1", loss_field(&LossWeights::forward)},
      {"train.loss.lambda2", loss_field(&LossWeights::backward)},
      {"train.loss.lambda3", loss_field(&LossWeights::both)},
      {"train.grad_clip", double_field(&Config::train, &TrainConfig::grad_clip)},
      {"train.augment_rotate", bool_field(&Config::train, &TrainConfig::augment_rotate)},
      {"train.val_fraction", double_field(&Config::train, &TrainConfig::val_fraction)},
      {"train.checkpoint_every", index_field(&Config::train, &TrainConfig::checkpoint_every)},
      {"train.out_dir", string_field(&Config::train, &TrainConfig::out_dir)},
      {"eval.k", index_field(&Config::eval, &EvalConfig::k)},
      {"eval.sigma", double_field(&Config::eval, &EvalConfig::sigma)},
      {"eval.batch", index_field(&Config::eval, &EvalConfig::batch)},
      {"data.format", string_field(&Config::data, &DataConfig::format)},
      {"data.paths",
       {[](const Config& c) { return join(c.data.paths); },
        [](Config& c, const std::string&, const std::string& v) { c.data.paths = split_list(v); }}},
      {"data.test_scene", string_field(&Config::data, &DataConfig::test_scene)},
      {"data.synth", string_field(&Config::data, &DataConfig::synth)},
      {"data.test_synth", string_field(&Config::data, &DataConfig::test_synth)},
      {"data.stride", index_field(&Config::data, &DataConfig::stride)},
  };
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& [name, f] : field_table()) {
    if (name == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

Config Config::paper() { return Config{}; }

Config Config::toy() {
  Config c;
  c.preset = "toy";
  c.model.width = 32;
  c.model.heads = 4;
  c.model.channels = 32;
  c.model.flow_steps = 4;
  c.model.coupling_hidden = 64;
  c.model.factor_out = false;
  c.model.decoder_hidden = 32;
  c.train.batch = 8;
  c.train.lr = 1e-3;
  c.train.weight_decay = 1e-6;
  c.train.epochs = 50;
  c.train.k = 20;
  c.train.grad_clip = 10.0;
  c.train.augment_rotate = true;
  c.train.out_dir = "runs/toy";
  return c;
}

Config Config::preset_named(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "toy") return toy();
  throw ConfigError("unknown preset '" + name + "' (expected paper or toy)");
}

const std::vector<std::string>& Config::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : field_table()) out.push_back(name);
    return out;
  }();
  return names;
}

void Config::set(const std::string& key, const std::string& value) {
  if (key == "preset") {
    *this = preset_named(value);
    return;
  }
  field(key).set(*this, key, value);
}

std::string Config::get(const std::string& key) const {
  if (key == "preset") return preset;
  return field(key).get(*this);
}

std::string Config::to_text() const {
  std::ostringstream out;
  out << "preset = " << preset << '\n';
  for (const auto& [name, f] : field_table()) out << name << " = " << f.get(*this) << '\n';
  return out.str();
}

Config Config::parse(const std::string& text, const std::string& source) {
  std::vector<std::tuple<long, std::string, std::string>> entries;
  std::string preset = "paper";
  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "preset") {
      preset = value;
    } else {
      entries.emplace_back(line_no, key, value);
    }
  }
  Config c;
  try {
    c = preset_named(preset);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  for (const auto& [no, key, value] : entries) {
    try {
      c.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(no) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

void Config::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  const ModelConfig& m = model;
  require(m.width >= 1 && m.heads >= 1 && m.width % m.heads == 0,
          "model.width must be a positive multiple of model.heads");
  require(m.channels >= 2 && m.channels % 2 == 0, "model.channels must be even and >= 2");
  require(m.flow_steps >= 1, "model.flow_steps must be >= 1");
  require(m.coupling_hidden >= 1 && m.decoder_hidden >= 1, "hidden widths must be >= 1");
  require(m.obs_len >= 2, "model.obs_len must be >= 2");
  require(m.pred_len >= 1, "model.pred_len must be >= 1");
  require(m.log_scale_clamp > 0.0, "model.log_scale_clamp must be positive");
  if (m.factor_out) {
    require(m.factor_channels >= 2 && m.factor_channels % 2 == 0 && m.factor_every >= 1,
            "factor-out needs an even model.factor_channels and model.factor_every >= 1");
    const Index splits = (m.flow_steps - 1) / m.factor_every;
    require(m.channels - splits * m.factor_channels >= 2,
            "factor-out removes too many channels for model.channels");
  }
  require(train.batch >= 1 && train.k >= 1 && train.epochs >= 0, "train.batch, train.k >= 1");
  require(train.lr > 0.0 && train.beta1 >= 0.0 && train.beta1 < 1.0 && train.beta2 >= 0.0 &&
              train.beta2 < 1.0 && train.weight_decay >= 0.0,
          "invalid optimizer settings");
  require(train.sigma >= 0.0 && eval.sigma >= 0.0, "sigma must be >= 0");
  require(train.loss.goal >= 0.0 && train.loss.forward >= 0.0 && train.loss.backward >= 0.0 &&
              train.loss.both >= 0.0,
          "loss weights must be nonnegative");
  require(train.val_fraction >= 0.0 && train.val_fraction < 1.0, "train.val_fraction must be in [0, 1)");
  require(train.checkpoint_every >= 1, "train.checkpoint_every must be >= 1");
  require(eval.k >= 1 && eval.batch >= 1, "eval.k and eval.batch must be >= 1");
  require(data.format == "synth" || data.format == "eth_ucy", "data.format must be synth or eth_ucy");
  require(data.stride >= 1, "data.stride must be >= 1");
}

void apply_env_overrides(Config& config) {
  const char* env = std::getenv("STGLOW_SEED");
  if (env == nullptr || *env == '\0') return;
  config.seed = to_u64("STGLOW_SEED", env);
}

}  // namespace stglow
