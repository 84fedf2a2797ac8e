// SPDX-License-Identifier: Apache-2.0
#include "stglow/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stglow/errors.hpp"

namespace stglow {

namespace {

std::uint64_t fnv1a64(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  template <typename T>
  void uint(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double d) { uint(std::bit_cast<std::uint64_t>(d)); }
  void str(const std::string& s) {
    uint(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void matrix(const Matrix& m) {
    uint<std::uint32_t>(2);
    uint(static_cast<std::uint64_t>(m.rows()));
    uint(static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.size(); ++i) f64(m.data()[i]);
  }
  std::string& buffer() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& data, std::size_t end) : data_(data), end_(end) {}
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  template <typename T>
  T uint() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::string str() {
    const auto n = uint<std::uint32_t>();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Matrix matrix() {
    const auto ndims = uint<std::uint32_t>();
    if (ndims != 2) throw DataError("checkpoint: only 2-D arrays are supported");
    const auto rows = uint<std::uint64_t>();
    const auto cols = uint<std::uint64_t>();
    if (rows > (1ULL << 32) || cols > (1ULL << 32)) throw DataError("checkpoint: implausible shape");
    need(rows * cols * 8);
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = f64();
    return m;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& data_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  w.bytes("STGF", 4);
  w.uint(c.version);
  w.str(c.config_text);
  w.uint(c.state.epoch);
  w.uint(c.state.global_step);
  w.uint(c.state.skipped_steps);
  w.f64(c.state.best_val_ade);
  w.uint<std::uint8_t>(c.flow_initialized ? 1 : 0);
  w.str(c.state.rng_state);
  w.uint(static_cast<std::uint32_t>(c.parameters.size()));
  for (const auto& p : c.parameters) {
    w.str(p.name);
    w.matrix(p.value);
  }
  const AdamState& a = c.state.adam;
  if (a.m.size() != a.v.size()) throw ContractError("checkpoint: optimizer moment count mismatch");
  w.uint(static_cast<std::uint64_t>(a.step));
  w.uint(static_cast<std::uint32_t>(a.m.size()));
  for (const auto& m : a.m) w.matrix(m);
  for (const auto& v : a.v) w.matrix(v);
  const std::uint64_t sum = fnv1a64(w.buffer().data(), w.buffer().size());
  w.uint(sum);
  return std::move(w.buffer());
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 4, "STGF") != 0) {
    throw DataError("not a checkpoint: missing STGF magic");
  }
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[body + i])) << (8 * i);
  }
  Reader r(bytes, body);
  r.need(4);
  r.uint<std::uint32_t>();  // magic, checked above
  Checkpoint c;
  c.version = r.uint<std::uint32_t>();
  if (c.version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(c.version));
  }
  if (fnv1a64(bytes.data(), body) != stored) throw DataError("checkpoint checksum mismatch");
  c.config_text = r.str();
  c.state.epoch = r.uint<std::uint64_t>();
  c.state.global_step = r.uint<std::uint64_t>();
  c.state.skipped_steps = r.uint<std::uint64_t>();
  c.state.best_val_ade = r.f64();
  c.flow_initialized = r.uint<std::uint8_t>() != 0;
  c.state.rng_state = r.str();
  const auto n = r.uint<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedArray p;
    p.name = r.str();
    p.value = r.matrix();
    c.parameters.push_back(std::move(p));
  }
  c.state.adam.step = static_cast<long>(r.uint<std::uint64_t>());
  const auto m = r.uint<std::uint32_t>();
  for (std::uint32_t i = 0; i < m; ++i) c.state.adam.m.push_back(r.matrix());
  for (std::uint32_t i = 0; i < m; ++i) c.state.adam.v.push_back(r.matrix());
  if (r.pos() != body) throw DataError("checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint '" + tmp + "'");
    const std::string bytes = serialize_checkpoint(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing checkpoint '" + tmp + "'");
  }
  std::filesystem::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return deserialize_checkpoint(buf.str());
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

Checkpoint capture(const StGlowModel& model, const TrainingState& state) {
  Checkpoint c;
  c.config_text = model.config().to_text();
  c.flow_initialized = model.flow_initialized();
  for (const auto& [name, t] : model.parameters()) c.parameters.push_back({name, t.value()});
  c.state = state;
  return c;
}

void restore(StGlowModel& model, const Checkpoint& ckpt) {
  ParameterSet& ps = model.parameters();
  if (ckpt.parameters.size() != ps.size()) {
    throw DimensionError("checkpoint holds " + std::to_string(ckpt.parameters.size()) +
                         " parameters, model has " + std::to_string(ps.size()));
  }
  for (const auto& p : ckpt.parameters) {
    Tensor& t = ps.find(p.name);
    if (t.rows() != p.value.rows() || t.cols() != p.value.cols()) {
      throw DimensionError("checkpoint parameter '" + p.name + "' has shape " +
                           std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()) +
                           ", model expects " + t.shape_str());
    }
    t.mutable_value() = p.value;
  }
  for (auto& s : model.flow().steps()) {
    if (s.norm) s.norm->mark_initialized(ckpt.flow_initialized);
  }
}

Config checkpoint_config(const Checkpoint& ckpt) {
  return Config::parse(ckpt.config_text, "<checkpoint config>");
}

}  // namespace stglow
