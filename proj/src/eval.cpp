#include "survtrace/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "survtrace/errors.hpp"
#include "survtrace/text.hpp"

namespace survtrace {

double survival_from_hazards(std::span<const double> hazards, const TimeGrid& grid, double t, bool* clamped) {
  if (hazards.size() != grid.bins()) throw DimensionError("hazard count does not match the time grid");
  const auto pos = grid.locate(t);
  if (clamped != nullptr) *clamped = pos.clamped;
  double cum = hazards[pos.bin] * pos.proportion;
  for (std::size_t j = 0; j < pos.bin; ++j) cum += hazards[j];
  if (cum < 0.0) throw ContractError("hazards must be nonnegative");
  return std::exp(-cum);
}

std::vector<double> survival_discrete(std::span<const double> hazards) {
  std::vector<double> out;
  double s = 1.0;
  for (double h : hazards) {
    if (h < 0.0 || h > 1.0) throw ContractError("discrete hazards must lie in [0, 1]");
    s *= 1.0 - h;
    out.push_back(s);
  }
  return out;
}

SurvivalCurve::SurvivalCurve(std::vector<double> hazards, TimeGrid grid)
    : hazards_(std::move(hazards)), grid_(std::move(grid)) {
  for (double c : grid_.cuts()) values_.push_back(survival_from_hazards(hazards_, grid_, c));
}

CensoringEstimate::CensoringEstimate(std::vector<double> times, std::vector<double> values)
    : times_(std::move(times)), values_(std::move(values)) {
  if (times_.size() != values_.size()) throw ContractError("censoring estimate: size mismatch");
}

double CensoringEstimate::at(double t) const {
  const auto it = std::upper_bound(times_.begin(), times_.end(), t);
  return it == times_.begin() ? 1.0 : values_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

double CensoringEstimate::before(double t) const {
  const auto it = std::lower_bound(times_.begin(), times_.end(), t);
  return it == times_.begin() ? 1.0 : values_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

CensoringEstimate km_censoring(std::span<const double> durations, std::span<const int> events) {
  if (durations.size() != events.size()) throw DimensionError("km_censoring: duration and event counts differ");
  if (durations.empty()) throw ContractError("km_censoring: empty training set");
  std::vector<std::size_t> order(durations.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return durations[a] < durations[b]; });
  std::vector<double> times, values;
  double g = 1.0;
  std::size_t at_risk = durations.size();
  std::size_t i = 0;
  while (i < order.size()) {
    const double t = durations[order[i]];
    std::size_t censored = 0, total = 0;
    while (i < order.size() && durations[order[i]] == t) {
      if (events[order[i]] == 0) ++censored;
      ++total;
      ++i;
    }
    if (censored > 0) {
      g *= 1.0 - static_cast<double>(censored) / static_cast<double>(at_risk);
      times.push_back(t);
      values.push_back(g);
    }
    at_risk -= total;
  }
  return CensoringEstimate(std::move(times), std::move(values));
}

CensoringEstimate km_censoring(std::span<const SurvivalRecord> records) {
  std::vector<double> d;
  std::vector<int> e;
  for (const auto& r : records) {
    d.push_back(r.duration);
    e.push_back(r.event);
  }
  return km_censoring(d, e);
}

std::vector<double> quantile_horizons(std::span<const double> event_durations, std::span<const double> quantiles) {
  if (event_durations.empty()) throw ContractError("quantile horizons need at least one event duration");
  std::vector<double> sorted(event_durations.begin(), event_durations.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  for (double q : quantiles) out.push_back(empirical_quantile(sorted, q));
  return out;
}

ConcordanceResult ctd(std::span<const double> survival, std::span<const double> durations,
                      std::span<const int> events, double tau, int event, const CensoringEstimate& censoring) {
  const std::size_t n = survival.size();
  if (durations.size() != n || events.size() != n) throw DimensionError("ctd: input lengths differ");
  ConcordanceResult out;
  double concordant = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (events[i] != event || durations[i] > tau) continue;
    const double g = censoring.before(durations[i]);
    if (!(g > 0.0)) continue;
    const double w = 1.0 / (g * g);
    for (std::size_t j = 0; j < n; ++j) {
      if (!(durations[i] < durations[j])) continue;
      ++out.comparable_pairs;
      out.weight += w;
      if (survival[i] < survival[j]) {
        concordant += w;
      } else if (survival[i] == survival[j]) {
        concordant += 0.5 * w;
      }
    }
  }
  if (out.comparable_pairs == 0 || !(out.weight > 0.0)) {
    throw UndefinedMetricError("C^td undefined for event " + std::to_string(event) + " at horizon " +
                               text::format_number(tau) + ": no comparable pairs");
  }
  out.value = concordant / out.weight;
  return out;
}

}  // namespace survtrace
