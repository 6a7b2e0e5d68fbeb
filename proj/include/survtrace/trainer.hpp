#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "survtrace/data.hpp"
#include "survtrace/eval.hpp"
#include "survtrace/losses.hpp"
#include "survtrace/model.hpp"
#include "survtrace/propensity.hpp"

namespace survtrace {

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  // Epoch at which γ reaches 0 under linear annealing; 0 means max_epochs - 1.
  std::size_t anneal_epochs = 0;
  AnnealMode anneal = AnnealMode::linear;
  double gamma_mp = 1.0;
  double gamma_ls = 1.0;
  std::size_t time_bins = 10;
  GridScheme grid_scheme = GridScheme::quantile;
  // Competing events: IPS-weighted survival loss (otherwise the naive average).
  bool use_ips = true;
  PropensityConfig propensity;
  ModelConfig model;
  SplitFractions split;
  std::uint64_t seed = 42;

  void validate() const;
  AnnealSchedule schedule() const;
};

struct EpochRecord {
  LossBreakdown train;     // batch-averaged
  double validation = 0.0;
  bool improved = false;
};

struct TrainHistory {
  double initial_validation = 0.0;  // before the first update
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_validation = 0.0;
  bool stopped_early = false;
};

struct TrainResult {
  SurvTraceModel model;
  std::optional<PropensityModel> propensity;
  TrainHistory history;
};

// Called after each epoch; handy for progress output.
using EpochCallback = std::function<void(std::size_t epoch, const EpochRecord&)>;

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& validation_set,
                  const EpochCallback& on_epoch = {});

// Survival term (IPS / naive competing loss, or mean PCH for one event) over
// a whole dataset. This is the early-stopping criterion.
double survival_loss(const SurvTraceModel& model, const std::optional<PropensityModel>& propensity,
                     const Dataset& data, bool use_ips);

// Full γ-weighted breakdown over a whole dataset at a given epoch's γ.
LossBreakdown dataset_loss(const SurvTraceModel& model, const std::optional<PropensityModel>& propensity,
                           const Dataset& data, bool use_ips, const AnnealSchedule& schedule, std::size_t epoch);

struct HorizonMetric {
  double quantile = 0.0;
  double horizon = 0.0;
  double ctd = 0.0;
  std::size_t comparable_pairs = 0;
};

struct EventMetrics {
  int event = 1;
  std::vector<HorizonMetric> horizons;
};

struct MetricsReport {
  std::vector<EventMetrics> events;
};

// C^td per event at the quantiles of `reference_event_times`.
MetricsReport evaluate(const SurvTraceModel& model, std::span<const SurvivalRecord> test,
                       const CensoringEstimate& censoring, std::span<const double> quantiles,
                       std::span<const double> reference_event_times);

// Event durations (e > 0) of a record set, the usual horizon reference.
std::vector<double> event_times(std::span<const SurvivalRecord> records);

// values[r][k][t] = S_{k+1}(times[t] | x_r).
struct CurvePrediction {
  std::vector<double> times;
  std::vector<std::vector<std::vector<double>>> values;
  std::size_t size() const;  // records × events × times
};

CurvePrediction predict(const SurvTraceModel& model, std::span<const SurvivalRecord> records,
                        std::span<const double> times);

}  // namespace survtrace
