// SPDX-License-Identifier: Apache-2.0
#pragma once

// Trainable building blocks shared by the encoder, flow and decoder.
// Modules hold Tensor handles; copying a module aliases its parameters.

#include <span>
#include <string>
#include <vector>

#include "stglow/optim.hpp"
#include "stglow/random.hpp"
#include "stglow/tensor.hpp"

namespace stglow {

enum class Init { kUniform, kZero };

// y = x W + b with W (in x out).
class Linear {
 public:
  Linear() = default;
  Linear(Index in, Index out, Rng& rng, bool bias = true, Init init = Init::kUniform);

  Tensor operator()(const Tensor& x) const;
  void collect(ParameterSet& ps, const std::string& prefix) const;

  Index in_features() const { return weight_.rows(); }
  Index out_features() const { return weight_.cols(); }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
  bool has_bias_ = true;
};

// Stack of Linear layers with ReLU between them (and after the last one
// when activate_last is set).
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<Index> dims, Rng& rng, bool activate_last = false,
      Init last_init = Init::kUniform);

  Tensor operator()(const Tensor& x) const;
  void collect(ParameterSet& ps, const std::string& prefix) const;
  Linear& layer(std::size_t i) { return layers_[i]; }
  std::size_t depth() const { return layers_.size(); }

 private:
  std::vector<Linear> layers_;
  bool activate_last_ = false;
};

// Gated recurrent unit: reset gate r, update gate z, candidate n.
//   h' = (1 - z) * n + z * h
class GruCell {
 public:
  GruCell() = default;
  GruCell(Index input, Index hidden, Rng& rng);

  Tensor operator()(const Tensor& x, const Tensor& h) const;
  void collect(ParameterSet& ps, const std::string& prefix) const;
  Index hidden() const { return hidden_; }

 private:
  Linear input_;
  Linear recurrent_;
  Index hidden_ = 0;
};

// Multi-head self-attention over row groups; heads are concatenated and
// projected back to the model width.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(Index width, Index heads, Rng& rng);

  Tensor operator()(const Tensor& x, std::span<const Index> groups, std::span<const Matrix> masks,
                    std::vector<std::vector<Matrix>>* weights = nullptr) const;
  void collect(ParameterSet& ps, const std::string& prefix) const;
  Index heads() const { return heads_; }

 private:
  Linear query_, key_, value_, out_;
  Index heads_ = 1;
};

// Attention sublayer and feed-forward sublayer, each with a plain residual:
//   a = x + Attn(x);  y = a + FFN(a)
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(Index width, Index heads, Index ffn_width, Rng& rng);

  Tensor operator()(const Tensor& x, std::span<const Index> groups, std::span<const Matrix> masks,
                    std::vector<std::vector<Matrix>>* weights = nullptr) const;
  void collect(ParameterSet& ps, const std::string& prefix) const;

  const MultiHeadAttention& attention() const { return attention_; }
  const Mlp& ffn() const { return ffn_; }

 private:
  MultiHeadAttention attention_;
  Mlp ffn_;
};

}  // namespace stglow
