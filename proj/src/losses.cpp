#include "survtrace/losses.hpp"

#include <algorithm>
#include <cmath>

#include "survtrace/errors.hpp"
#include "survtrace/text.hpp"

namespace survtrace {

SurvivalTargets make_targets(RecordBatch batch, const TimeGrid& grid) {
  SurvivalTargets t;
  for (const auto* r : batch) {
    const auto pos = grid.locate(r->duration);
    t.bins.push_back(pos.bin);
    t.proportions.push_back(pos.proportion);
    t.events.push_back(r->event);
    t.durations.push_back(r->duration);
  }
  return t;
}

// ---- plain -------------------------------------------------------------------

namespace {

void require_positive(std::span<const double> hazards, std::size_t bins) {
  if (hazards.size() != bins) {
    throw DimensionError("expected " + std::to_string(bins) + " hazards, got " + std::to_string(hazards.size()));
  }
  for (double h : hazards) {
    if (!(h > 0.0)) throw ContractError("hazards must be positive, got " + text::format_number(h));
  }
}

}  // namespace

double cumulative_hazard(std::span<const double> hazards, double t, const TimeGrid& grid) {
  if (hazards.size() != grid.bins()) throw DimensionError("hazard count does not match the time grid");
  const auto pos = grid.locate(t);
  double s = hazards[pos.bin] * pos.proportion;
  for (std::size_t j = 0; j < pos.bin; ++j) s += hazards[j];
  return s;
}

double pch_loss(std::span<const double> hazards, double t, int event, const TimeGrid& grid) {
  require_positive(hazards, grid.bins());
  if (event != 0 && event != 1) throw ContractError("single-event label must be 0 or 1");
  const auto pos = grid.locate(t);
  return -event * std::log(hazards[pos.bin]) + cumulative_hazard(hazards, t, grid);
}

double competing_record_loss(std::span<const std::vector<double>> hazards_by_event, double t, int k,
                             const TimeGrid& grid) {
  if (k < 1 || static_cast<std::size_t>(k) > hazards_by_event.size()) {
    throw ContractError("event index out of range");
  }
  double loss = 0.0;
  for (std::size_t e = 0; e < hazards_by_event.size(); ++e) {
    require_positive(hazards_by_event[e], grid.bins());
    loss += cumulative_hazard(hazards_by_event[e], t, grid);
  }
  const auto pos = grid.locate(t);
  return loss - std::log(hazards_by_event[static_cast<std::size_t>(k - 1)][pos.bin]);
}

// ---- differentiable -------------------------------------------------------------

Var cumulative_hazard(const Var& hazards, const SurvivalTargets& targets) {
  const std::size_t b = hazards.rows(), m = hazards.cols();
  if (b != targets.size()) throw DimensionError("hazard rows do not match the batch size");
  Tensor weights({b, m});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < targets.bins[i]; ++j) weights(i, j) = 1.0;
    weights(i, targets.bins[i]) = targets.proportions[i];
  }
  return row_sum(mul(hazards, weights));
}

namespace {

void require_positive(const Var& hazards) {
  for (double h : hazards.value().values()) {
    if (!(h > 0.0)) throw ContractError("hazards must be positive, got " + text::format_number(h));
  }
}

// Σ_i w_i ℓ_{i e_i} over uncensored records i, with ℓ as in competing_record_loss.
Var weighted_competing_sum(std::span<const Var> hazards, const SurvivalTargets& targets,
                           const std::vector<double>& weights) {
  const std::size_t b = targets.size();
  Tensor w({b, 1});
  for (std::size_t i = 0; i < b; ++i) w[i] = weights[i];
  Var total;
  for (std::size_t k = 0; k < hazards.size(); ++k) {
    require_positive(hazards[k]);
    Tensor mask({b, 1});
    for (std::size_t i = 0; i < b; ++i) {
      mask[i] = targets.events[i] == static_cast<int>(k + 1) ? -weights[i] : 0.0;
    }
    Var event_term = sum(mul(log(pick(hazards[k], targets.bins)), mask));
    Var cum_term = sum(mul(cumulative_hazard(hazards[k], targets), w));
    Var both = add(event_term, cum_term);
    total = total.valid() ? add(total, both) : both;
  }
  return total;
}

}  // namespace

Var pch_loss(const Var& hazards, const SurvivalTargets& targets) {
  require_positive(hazards);
  const std::size_t b = targets.size();
  if (b == 0) throw ContractError("pch_loss: empty batch");
  Tensor mask({b, 1});
  for (std::size_t i = 0; i < b; ++i) mask[i] = targets.events[i] > 0 ? -1.0 : 0.0;
  Var event_term = sum(mul(log(pick(hazards, targets.bins)), mask));
  Var cum_term = sum(cumulative_hazard(hazards, targets));
  return affine(add(event_term, cum_term), 1.0 / static_cast<double>(b));
}

Var naive_competing_loss(std::span<const Var> hazards, const SurvivalTargets& targets) {
  if (hazards.size() < 2) throw ContractError("naive competing loss needs at least two event types");
  if (targets.size() == 0) throw ContractError("naive competing loss: empty batch");
  const auto observed = static_cast<std::size_t>(
      std::count_if(targets.events.begin(), targets.events.end(), [](int e) { return e > 0; }));
  if (observed == 0) throw ContractError("naive competing loss: batch has no observed events");
  std::vector<double> w(targets.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = targets.events[i] > 0 ? 1.0 / static_cast<double>(observed) : 0.0;
  return weighted_competing_sum(hazards, targets, w);
}

Var ips_loss(std::span<const Var> hazards, const SurvivalTargets& targets, const Tensor& propensities,
             double floor) {
  const std::size_t n = targets.size();
  const std::size_t k = hazards.size();
  if (n == 0) throw ContractError("ips loss: empty batch");
  if (propensities.rows() != n || propensities.cols() != k) {
    throw DimensionError("ips loss: propensities " + shape_string(propensities.shape()) + " for " +
                         std::to_string(n) + " records and " + std::to_string(k) + " events");
  }
  std::vector<double> w(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const int e = targets.events[i];
    if (e < 0 || static_cast<std::size_t>(e) > k) throw ContractError("ips loss: event label out of range");
    if (e == 0) continue;
    const double pi = propensities(i, static_cast<std::size_t>(e - 1));
    if (!(pi > 0.0) || pi > 1.0 + 1e-12) {
      throw ContractError("propensity must lie in (0, 1], got " + text::format_number(pi));
    }
    w[i] = 1.0 / (static_cast<double>(n * k) * std::max(pi, floor));
  }
  return weighted_competing_sum(hazards, targets, w);
}

Var mp_loss(const Var& probability, const SurvivalTargets& targets) {
  const std::size_t b = targets.size();
  if (probability.value().size() != b) throw DimensionError("mp loss: prediction count differs from batch");
  Tensor pos({b, 1}), neg({b, 1});
  for (std::size_t i = 0; i < b; ++i) {
    const bool delta = targets.events[i] > 0;
    pos[i] = delta ? -1.0 : 0.0;
    neg[i] = delta ? 0.0 : -1.0;
  }
  Var p = reshape(probability, {b, 1});
  Var ll = add(sum(mul(log(p), pos)), sum(mul(log(affine(p, -1.0, 1.0)), neg)));
  return affine(ll, 1.0 / static_cast<double>(b));
}

Var ls_loss(const Var& predicted, std::span<const double> observed) {
  const std::size_t b = observed.size();
  if (b == 0) throw ContractError("ls loss: empty batch");
  if (predicted.value().size() != b) throw DimensionError("ls loss: prediction count differs from batch");
  Tape& tape = predicted.tape();
  Var target = tape.constant(Tensor({b, 1}, std::vector<double>(observed.begin(), observed.end())));
  return mean(square(sub(reshape(predicted, {b, 1}), target)));
}

std::pair<double, double> AnnealSchedule::gammas(std::size_t epoch) const {
  if (mode == AnnealMode::constant) return {initial_mp, initial_ls};
  const double f = horizon == 0 ? (epoch == 0 ? 1.0 : 0.0)
                                : std::max(0.0, 1.0 - static_cast<double>(epoch) / static_cast<double>(horizon));
  return {initial_mp * f, initial_ls * f};
}

TotalLoss total_loss(const Var& survival, const Var& mp, const Var& ls, const AnnealSchedule& schedule,
                     std::size_t epoch) {
  const auto [g1, g2] = schedule.gammas(epoch);
  TotalLoss out;
  out.value = add(add(survival, affine(mp, g1)), affine(ls, g2));
  out.breakdown.survival = survival.value()[0];
  out.breakdown.mp = mp.value()[0];
  out.breakdown.ls = ls.value()[0];
  out.breakdown.gamma_mp = g1;
  out.breakdown.gamma_ls = g2;
  out.breakdown.total = out.value.value()[0];
  return out;
}

}  // namespace survtrace
