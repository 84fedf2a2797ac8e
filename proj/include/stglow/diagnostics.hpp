// SPDX-License-Identifier: Apache-2.0
#pragma once

// Self-checks run by `stglow check`: flow invertibility, log-det against a
// numerical Jacobian, pattern-normalization init, the base-density anchor,
// attention masks, gradients against finite differences and checkpoint
// round-trips.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "stglow/checkpoint.hpp"
#include "stglow/flow.hpp"
#include "stglow/model.hpp"

namespace stglow {

struct CheckItem {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct CheckReport {
  std::vector<CheckItem> items;
  bool ok() const;
  // `name,pass|fail,detail` per line after a header.
  void write(std::ostream& out) const;
};

// Central-difference Jacobian of a row-vector map at x (1 x n).
Matrix numerical_jacobian(const std::function<Matrix(const Matrix&)>& f, const Matrix& x,
                          double step = 1e-6);

// max |reverse(forward(x)) - x| over `samples` random rows.
double flow_roundtrip_error(const FlowStack& flow, Index samples, Rng& rng);

// max |analytic log-det - log|det J|| over `samples` random rows.
double flow_logdet_error(const FlowStack& flow, Index samples, Rng& rng);

// Randomizes every flow parameter, including pattern-normalization scales
// (kept away from zero), and marks the flow initialized. Coupling weights
// draw with std scale/sqrt(fan_in), biases with std scale; W is a rotation
// plus a small width-scaled perturbation.
void randomize_flow(FlowStack& flow, Rng& rng, double scale = 0.3);

struct GradientCheckResult {
  Index checked = 0;
  Index failed = 0;
  double worst_rel = 0.0;
  std::string worst_name;
};

// Compares d(loss)/d(p) with central differences for `max_entries` entries
// per parameter (all when < 0). Passes an entry when
// |a - n| <= max(rel_tol * max(|a|, |n|), abs_floor).
GradientCheckResult gradient_check(ParameterSet& params, const std::function<Tensor()>& loss,
                                   Index max_entries, double rel_tol, double abs_floor,
                                   double step = 1e-6);

// Runs the suite on `ckpt` when given, on a fresh toy-preset model
// otherwise. Never throws for check failures.
CheckReport run_checks(const std::string* ckpt_path, std::uint64_t seed = 0);

}  // namespace stglow
