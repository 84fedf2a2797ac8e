// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stglow/tensor.hpp"

namespace stglow {

// Ordered, named view of a model's trainable tensors. Order is the
// construction order of the owning modules and is stable across runs.
class ParameterSet {
 public:
  void add(std::string name, Tensor t) { items_.emplace_back(std::move(name), std::move(t)); }
  std::size_t size() const { return items_.size(); }
  const std::string& name(std::size_t i) const { return items_[i].first; }
  Tensor& operator[](std::size_t i) { return items_[i].second; }
  const Tensor& operator[](std::size_t i) const { return items_[i].second; }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  void zero_grad();
  Index scalar_count() const;
  // Throws LookupError.
  Tensor& find(const std::string& name);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

// One Adam update with decoupled weight decay:
//   p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps).
// Parameters without a gradient are treated as having zero gradient.
void adam_step(ParameterSet& params, AdamState& state, const AdamOptions& opt);

}  // namespace stglow
