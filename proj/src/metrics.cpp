// SPDX-License-Identifier: Apache-2.0
#include "stglow/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "stglow/errors.hpp"

namespace stglow {

namespace {

void check_pair(const Matrix& pred, const Matrix& gt, const char* what) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols() || pred.cols() != 2 || pred.rows() == 0) {
    throw ContractError(std::string(what) + ": shapes " + std::to_string(pred.rows()) + "x" +
                        std::to_string(pred.cols()) + " and " + std::to_string(gt.rows()) + "x" +
                        std::to_string(gt.cols()) + " must match as steps x 2");
  }
}

}  // namespace

double ade(const Matrix& pred, const Matrix& gt) {
  check_pair(pred, gt, "ade");
  return (pred - gt).rowwise().norm().sum() / static_cast<double>(pred.rows());
}

double fde(const Matrix& pred, const Matrix& gt) {
  check_pair(pred, gt, "fde");
  return (pred.row(pred.rows() - 1) - gt.row(gt.rows() - 1)).norm();
}

BestOfK best_of_k(std::span<const Matrix> preds, const Matrix& gt) {
  if (preds.empty()) throw ContractError("best_of_k: K must be >= 1");
  BestOfK r;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const double a = ade(preds[k], gt);
    const double f = fde(preds[k], gt);
    if (k == 0 || a < r.ade) {
      r.ade = a;
      r.ade_index = static_cast<Index>(k);
    }
    if (k == 0 || f < r.fde) {
      r.fde = f;
      r.fde_index = static_cast<Index>(k);
    }
  }
  return r;
}

DatasetMetrics EvalReport::average() const {
  DatasetMetrics avg;
  avg.dataset = "AVG";
  avg.k = k;
  if (datasets.empty()) return avg;
  for (const auto& d : datasets) {
    avg.ade += d.ade;
    avg.fde += d.fde;
    avg.instances += d.instances;
  }
  avg.ade /= static_cast<double>(datasets.size());
  avg.fde /= static_cast<double>(datasets.size());
  return avg;
}

void EvalReport::write_csv(std::ostream& out) const {
  out << "dataset,K,ade,fde,n_instances\n";
  auto row = [&](const DatasetMetrics& d) {
    out << d.dataset << ',' << d.k << ',' << std::setprecision(10) << d.ade << ',' << d.fde << ','
        << d.instances << '\n';
  };
  for (const auto& d : datasets) row(d);
  if (datasets.size() > 1) row(average());
}

std::string EvalReport::csv() const {
  std::ostringstream s;
  write_csv(s);
  return s.str();
}

void MetricsAccumulator::add(const std::string& dataset, const BestOfK& r) {
  auto it = std::find(order_.begin(), order_.end(), dataset);
  std::size_t i = static_cast<std::size_t>(it - order_.begin());
  if (it == order_.end()) {
    order_.push_back(dataset);
    per_dataset_.emplace_back();
  }
  per_dataset_[i].push_back(r);
  all_.push_back(r);
}

EvalReport MetricsAccumulator::report() const {
  EvalReport rep;
  rep.k = k_;
  rep.instances = all_;
  for (std::size_t i = 0; i < order_.size(); ++i) {
    DatasetMetrics d;
    d.dataset = order_[i];
    d.k = k_;
    for (const auto& r : per_dataset_[i]) {
      d.ade += r.ade;
      d.fde += r.fde;
    }
    d.instances = static_cast<Index>(per_dataset_[i].size());
    d.ade /= static_cast<double>(d.instances);
    d.fde /= static_cast<double>(d.instances);
    rep.datasets.push_back(std::move(d));
  }
  return rep;
}

}  // namespace stglow
