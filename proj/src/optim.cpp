// SPDX-License-Identifier: Apache-2.0
#include "stglow/optim.hpp"

#include <cmath>

#include "stglow/errors.hpp"

namespace stglow {

void ParameterSet::zero_grad() {
  for (auto& [name, t] : items_) t.zero_grad();
}

Index ParameterSet::scalar_count() const {
  Index n = 0;
  for (const auto& [name, t] : items_) n += t.size();
  return n;
}

Tensor& ParameterSet::find(const std::string& name) {
  for (auto& [n, t] : items_) {
    if (n == name) return t;
  }
  throw LookupError("no parameter named '" + name + "'");
}

void adam_step(ParameterSet& params, AdamState& state, const AdamOptions& opt) {
  if (state.m.empty() && state.v.empty()) {
    for (const auto& [name, p] : params) {
      state.m.push_back(Matrix::Zero(p.rows(), p.cols()));
      state.v.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state covers " + std::to_string(state.m.size()) +
                         " tensors, parameter set has " + std::to_string(params.size()));
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    if (m.rows() != p.rows() || m.cols() != p.cols()) {
      throw DimensionError("adam_step: state shape mismatch for '" + params.name(i) + "'");
    }
    const Matrix g = p.grad();
    m = opt.beta1 * m + (1.0 - opt.beta1) * g;
    v = opt.beta2 * v + (1.0 - opt.beta2) * g.cwiseProduct(g);
    Matrix& w = p.mutable_value();
    if (opt.weight_decay != 0.0) w -= opt.lr * opt.weight_decay * w;
    w.array() -= opt.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + opt.eps);
  }
}

}  // namespace stglow
