#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "survtrace/autodiff.hpp"
#include "survtrace/data.hpp"
#include "survtrace/model.hpp"

namespace survtrace {

inline constexpr double kDefaultPropensityFloor = 0.05;

// Grid position and label of every record in a batch.
struct SurvivalTargets {
  std::vector<std::size_t> bins;       // κ(t) - 1
  std::vector<double> proportions;     // ρ(t)
  std::vector<int> events;             // e
  std::vector<double> durations;       // t

  std::size_t size() const { return bins.size(); }
};

SurvivalTargets make_targets(RecordBatch batch, const TimeGrid& grid);

// ---- plain evaluations ------------------------------------------------------

// Piecewise-constant-hazard negative log-likelihood of one record,
//   -e log λ(κ) + λ(κ) ρ(t) + Σ_{j<κ} λ(j),  e ∈ {0, 1}.
double pch_loss(std::span<const double> hazards, double t, int event, const TimeGrid& grid);

// Cumulative hazard Σ_{j<κ} λ(j) + λ(κ) ρ(t).
double cumulative_hazard(std::span<const double> hazards, double t, const TimeGrid& grid);

// ℓ_ik: loss of record i if its observed event were k (1-based). Head k
// takes the event term; every head contributes its cumulative hazard up to t.
double competing_record_loss(std::span<const std::vector<double>> hazards_by_event, double t, int k,
                             const TimeGrid& grid);

// ---- differentiable batch losses ------------------------------------------

// B×1 cumulative hazard per record.
Var cumulative_hazard(const Var& hazards, const SurvivalTargets& targets);

// Mean single-event PCH loss; any e > 0 counts as the event.
Var pch_loss(const Var& hazards, const SurvivalTargets& targets);

// Σ_i 1{e_i>0} ℓ_{i e_i} / Σ_i 1{e_i>0}. Requires at least two events types
// and at least one uncensored record.
Var naive_competing_loss(std::span<const Var> hazards, const SurvivalTargets& targets);

// (1 / (n K)) Σ_i 1{e_i>0} ℓ_{i e_i} / π_{i e_i}; propensities is n×K.
// Values below `floor` are raised to it; values <= 0 are rejected.
Var ips_loss(std::span<const Var> hazards, const SurvivalTargets& targets, const Tensor& propensities,
             double floor = kDefaultPropensityFloor);

// Mean binary cross-entropy against δ = 1{e > 0}.
Var mp_loss(const Var& probability, const SurvivalTargets& targets);

// Mean squared error against `observed`.
Var ls_loss(const Var& predicted, std::span<const double> observed);

// ---- total loss ----------------------------------------------------------------

struct LossBreakdown {
  double total = 0.0;
  double survival = 0.0;
  double mp = 0.0;
  double ls = 0.0;
  double gamma_mp = 0.0;
  double gamma_ls = 0.0;
};

enum class AnnealMode { linear, constant };

struct AnnealSchedule {
  double initial_mp = 1.0;
  double initial_ls = 1.0;
  AnnealMode mode = AnnealMode::linear;
  // Epoch at which the linear schedule reaches 0.
  std::size_t horizon = 1;

  // {γ₁, γ₂} at a 0-based epoch.
  std::pair<double, double> gammas(std::size_t epoch) const;
};

struct TotalLoss {
  Var value;
  LossBreakdown breakdown;
};

TotalLoss total_loss(const Var& survival, const Var& mp, const Var& ls, const AnnealSchedule& schedule,
                     std::size_t epoch);

}  // namespace survtrace
