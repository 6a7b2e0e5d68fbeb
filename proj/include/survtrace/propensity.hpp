#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "survtrace/data.hpp"
#include "survtrace/tensor.hpp"

namespace survtrace {

struct PropensityConfig {
  double l2 = 1e-4;
  double floor = 0.05;
  bool normalize = false;
  std::size_t max_iterations = 5000;
  double tolerance = 1e-8;
};

// One-vs-rest logistic model of which event a record experiences:
// π_k(x) = σ(w_kᵀx + β_k), clipped to [floor, 1].
class PropensityModel {
 public:
  PropensityModel() = default;
  PropensityModel(std::vector<std::vector<double>> weights, std::vector<double> offsets, double floor,
                  bool normalize);

  int num_events() const { return static_cast<int>(offsets_.size()); }
  std::size_t dimension() const { return weights_.empty() ? 0 : weights_[0].size(); }
  const std::vector<std::vector<double>>& weights() const { return weights_; }
  const std::vector<double>& offsets() const { return offsets_; }
  double floor() const { return floor_; }
  bool normalize() const { return normalize_; }

  std::vector<double> predict(std::span<const double> x) const;
  // n×K propensities for records described by `schema`.
  Tensor predict(const CovariateSchema& schema, std::span<const SurvivalRecord> records) const;

 private:
  std::vector<std::vector<double>> weights_;
  std::vector<double> offsets_;
  double floor_ = 0.05;
  bool normalize_ = false;
};

// labels are 1..num_events (censored records must be filtered out by the caller).
PropensityModel fit_propensity(std::span<const std::vector<double>> features, std::span<const int> labels,
                               int num_events, const PropensityConfig& config = {});

// Fits on the uncensored records of `data` using flattened covariates.
PropensityModel fit_propensity(const Dataset& data, const PropensityConfig& config = {});

}  // namespace survtrace
