#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "survtrace/data.hpp"

namespace survtrace {

// S(t) = exp(-[Σ_{j<κ(t)} λ_j + λ_κ(t) ρ(t)]); t beyond the grid is clamped
// to the horizon and reported through `clamped` when non-null.
double survival_from_hazards(std::span<const double> hazards, const TimeGrid& grid, double t,
                             bool* clamped = nullptr);

// Discrete recursion S(τ_j) = Π_{i<=j} (1 - λ_i), for hazards in [0, 1].
std::vector<double> survival_discrete(std::span<const double> hazards);

// Survival over a grid for one record and one event.
class SurvivalCurve {
 public:
  SurvivalCurve(std::vector<double> hazards, TimeGrid grid);

  const TimeGrid& grid() const { return grid_; }
  // S(τ_1..τ_m)
  const std::vector<double>& at_cuts() const { return values_; }
  double operator()(double t) const { return survival_from_hazards(hazards_, grid_, t); }

 private:
  std::vector<double> hazards_;
  TimeGrid grid_;
  std::vector<double> values_;
};

// Kaplan-Meier estimate of the censoring survival function G(t) = Pr(C > t).
class CensoringEstimate {
 public:
  CensoringEstimate() = default;
  CensoringEstimate(std::vector<double> times, std::vector<double> values);

  // Right-continuous G(t).
  double at(double t) const;
  // Left limit G(t-).
  double before(double t) const;

  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::vector<double> times_;   // distinct censoring times, ascending
  std::vector<double> values_;  // G just after each time
};

CensoringEstimate km_censoring(std::span<const double> durations, std::span<const int> events);
CensoringEstimate km_censoring(std::span<const SurvivalRecord> records);

std::vector<double> quantile_horizons(std::span<const double> event_durations, std::span<const double> quantiles);

struct ConcordanceResult {
  double value = 0.0;
  std::size_t comparable_pairs = 0;
  double weight = 0.0;  // Σ of IPCW pair weights
};

// IPCW time-dependent concordance for event k (1-based) at horizon tau.
// survival[i] is S_k(tau | x_i). Pair (i, j) is comparable when e_i = k,
// t_i < t_j and t_i <= tau; it is concordant when survival[i] < survival[j],
// counts 1/2 on ties, and carries weight 1 / G(t_i-)².
ConcordanceResult ctd(std::span<const double> survival, std::span<const double> durations,
                      std::span<const int> events, double tau, int event, const CensoringEstimate& censoring);

}  // namespace survtrace
