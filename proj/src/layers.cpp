// SPDX-License-Identifier: Apache-2.0
#include "stglow/layers.hpp"

#include <cmath>

#include "stglow/errors.hpp"

namespace stglow {

Linear::Linear(Index in, Index out, Rng& rng, bool bias, Init init) : has_bias_(bias) {
  if (init == Init::kZero) {
    weight_ = Tensor::parameter(Matrix::Zero(in, out));
    bias_ = Tensor::parameter(Matrix::Zero(1, out));
  } else {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight_ = Tensor::parameter(rand_uniform(in, out, rng, -bound, bound));
    bias_ = Tensor::parameter(rand_uniform(1, out, rng, -bound, bound));
  }
  if (!has_bias_) bias_ = Tensor();
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight_);
  return has_bias_ ? add_row(y, bias_) : y;
}

void Linear::collect(ParameterSet& ps, const std::string& prefix) const {
  ps.add(prefix + ".weight", weight_);
  if (has_bias_) ps.add(prefix + ".bias", bias_);
}

Mlp::Mlp(std::vector<Index> dims, Rng& rng, bool activate_last, Init last_init)
    : activate_last_(activate_last) {
  if (dims.size() < 2) throw ConfigError("Mlp needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = i + 2 == dims.size();
    layers_.emplace_back(dims[i], dims[i + 1], rng, true, last ? last_init : Init::kUniform);
  }
}

Tensor Mlp::operator()(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i](h);
    if (i + 1 < layers_.size() || activate_last_) h = relu(h);
  }
  return h;
}

void Mlp::collect(ParameterSet& ps, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].collect(ps, prefix + "." + std::to_string(i));
  }
}

GruCell::GruCell(Index input, Index hidden, Rng& rng)
    : input_(input, 3 * hidden, rng), recurrent_(hidden, 3 * hidden, rng), hidden_(hidden) {}

Tensor GruCell::operator()(const Tensor& x, const Tensor& h) const {
  const Tensor gi = input_(x);
  const Tensor gh = recurrent_(h);
  const Index H = hidden_;
  const Tensor r = sigmoid(slice_cols(gi, 0, H) + slice_cols(gh, 0, H));
  const Tensor z = sigmoid(slice_cols(gi, H, H) + slice_cols(gh, H, H));
  const Tensor n = tanh(slice_cols(gi, 2 * H, H) + mul(r, slice_cols(gh, 2 * H, H)));
  return n + mul(z, h - n);
}

void GruCell::collect(ParameterSet& ps, const std::string& prefix) const {
  input_.collect(ps, prefix + ".input");
  recurrent_.collect(ps, prefix + ".recurrent");
}

MultiHeadAttention::MultiHeadAttention(Index width, Index heads, Rng& rng)
    : query_(width, width, rng, false),
      key_(width, width, rng, false),
      value_(width, width, rng, false),
      out_(width, width, rng),
      heads_(heads) {
  if (heads <= 0 || width % heads != 0) {
    throw ConfigError("attention width " + std::to_string(width) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

Tensor MultiHeadAttention::operator()(const Tensor& x, std::span<const Index> groups,
                                      std::span<const Matrix> masks,
                                      std::vector<std::vector<Matrix>>* weights) const {
  return out_(grouped_attention(query_(x), key_(x), value_(x), groups, masks, heads_, weights));
}

void MultiHeadAttention::collect(ParameterSet& ps, const std::string& prefix) const {
  query_.collect(ps, prefix + ".query");
  key_.collect(ps, prefix + ".key");
  value_.collect(ps, prefix + ".value");
  out_.collect(ps, prefix + ".out");
}

TransformerBlock::TransformerBlock(Index width, Index heads, Index ffn_width, Rng& rng)
    : attention_(width, heads, rng), ffn_({width, ffn_width, width}, rng) {}

Tensor TransformerBlock::operator()(const Tensor& x, std::span<const Index> groups,
                                    std::span<const Matrix> masks,
                                    std::vector<std::vector<Matrix>>* weights) const {
  const Tensor a = x + attention_(x, groups, masks, weights);
  return a + ffn_(a);
}

void TransformerBlock::collect(ParameterSet& ps, const std::string& prefix) const {
  attention_.collect(ps, prefix + ".attn");
  ffn_.collect(ps, prefix + ".ffn");
}

}  // namespace stglow
