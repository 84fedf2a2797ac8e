// SPDX-License-Identifier: Apache-2.0
#pragma once

// Displacement metrics over predicted trajectories (steps x 2, meters).

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "stglow/tensor.hpp"

namespace stglow {

// Mean Euclidean distance over steps. Throws ContractError on shape
// mismatch or empty trajectories.
double ade(const Matrix& pred, const Matrix& gt);
// Euclidean distance at the final step.
double fde(const Matrix& pred, const Matrix& gt);

struct BestOfK {
  double ade = 0.0;
  double fde = 0.0;
  Index ade_index = 0;  // sample attaining each minimum, lowest on ties
  Index fde_index = 0;
};

// Independent minima of ADE and FDE over the samples. Throws ContractError
// when `preds` is empty.
BestOfK best_of_k(std::span<const Matrix> preds, const Matrix& gt);

struct DatasetMetrics {
  std::string dataset;
  Index k = 0;
  double ade = 0.0;  // unweighted mean over instances
  double fde = 0.0;
  Index instances = 0;
};

struct EvalReport {
  Index k = 0;
  std::vector<DatasetMetrics> datasets;
  // Per instance, in evaluation order.
  std::vector<BestOfK> instances;

  // Mean of the per-dataset values.
  DatasetMetrics average() const;
  // `dataset,K,ade,fde,n_instances`, one row per dataset, then an AVG row
  // when there is more than one dataset.
  void write_csv(std::ostream& out) const;
  std::string csv() const;
};

// Accumulates best-of-K results into per-dataset means.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(Index k) : k_(k) {}
  void add(const std::string& dataset, const BestOfK& r);
  EvalReport report() const;

 private:
  Index k_;
  std::vector<std::string> order_;
  std::vector<std::vector<BestOfK>> per_dataset_;
  std::vector<BestOfK> all_;
};

}  // namespace stglow
