#include "survtrace/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "survtrace/errors.hpp"
#include "survtrace/optim.hpp"

namespace survtrace {

void TrainConfig::validate() const {
  model.validate();
  if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0)) throw ContractError("learning rate and weight decay must be >= 0");
  if (batch_size == 0 || max_epochs == 0) throw ContractError("batch_size and max_epochs must be positive");
  if (patience == 0) throw ContractError("patience must be positive");
  if (time_bins < 2) throw ContractError("time_bins must be at least 2");
  if (gamma_mp < 0.0 || gamma_ls < 0.0) throw ContractError("γ weights must be nonnegative");
}

AnnealSchedule TrainConfig::schedule() const {
  AnnealSchedule s;
  s.initial_mp = gamma_mp;
  s.initial_ls = gamma_ls;
  s.mode = anneal;
  s.horizon = anneal_epochs == 0 ? max_epochs - 1 : anneal_epochs;
  return s;
}

namespace {

constexpr std::size_t kEvalChunk = 1024;

std::vector<double> ls_targets(const SurvivalTargets& targets, const TimeGrid& grid) {
  std::vector<double> out;
  out.reserve(targets.size());
  for (double t : targets.durations) out.push_back(t / grid.horizon());
  return out;
}

Var survival_term(const ForwardResult& fwd, const SurvivalTargets& targets, const Tensor* propensities,
                  double floor) {
  if (fwd.hazards.size() == 1) return pch_loss(fwd.hazards[0], targets);
  if (propensities != nullptr) return ips_loss(fwd.hazards, targets, *propensities, floor);
  const bool any_event = std::any_of(targets.events.begin(), targets.events.end(), [](int e) { return e > 0; });
  if (!any_event) return fwd.hazards[0].tape().constant(Tensor::scalar(0.0));
  return naive_competing_loss(fwd.hazards, targets);
}

// False once the network has left the region where the losses are finite:
// an overflowed activation, or a softplus hazard that underflowed to 0.
bool outputs_usable(const ForwardResult& fwd) {
  for (const Var& h : fwd.hazards) {
    for (double v : h.value().values())
      if (!(v > 0.0) || !std::isfinite(v)) return false;
  }
  for (double v : fwd.mortality.value().values())
    if (!(v > 0.0 && v < 1.0)) return false;
  for (double v : fwd.length_of_stay.value().values())
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor rows_of(const Tensor& t, std::span<const std::size_t> rows) {
  Tensor out({rows.size(), t.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) out(i, j) = t(rows[i], j);
  }
  return out;
}

}  // namespace

LossBreakdown dataset_loss(const SurvTraceModel& model, const std::optional<PropensityModel>& propensity,
                           const Dataset& data, bool use_ips, const AnnealSchedule& schedule, std::size_t epoch) {
  const std::size_t n = data.size();
  if (n == 0) throw ContractError("loss over an empty dataset");
  const auto K = static_cast<std::size_t>(model.num_events());
  const bool ips = K > 1 && use_ips;
  if (ips && !propensity) throw ContractError("IPS loss requires a fitted propensity model");
  Tensor pi;
  if (ips) pi = propensity->predict(data.schema, data.records);
  const auto observed = static_cast<double>(
      std::count_if(data.records.begin(), data.records.end(), [](const auto& r) { return r.event > 0; }));

  double survival = 0.0, mp = 0.0, ls = 0.0;
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    const std::size_t stop = std::min(n, start + kEvalChunk);
    std::vector<const SurvivalRecord*> batch;
    for (std::size_t i = start; i < stop; ++i) batch.push_back(&data.records[i]);
    Tape tape(false);
    ForwardResult fwd = model.forward(tape, batch);
    if (!outputs_usable(fwd)) {
      const double inf = std::numeric_limits<double>::infinity();
      return LossBreakdown{inf, inf, inf, inf, 0.0, 0.0};
    }
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& r = *batch[b];
      std::vector<std::vector<double>> h(K);
      for (std::size_t k = 0; k < K; ++k) {
        const Tensor& hk = fwd.hazards[k].value();
        h[k].assign(&hk.values()[b * hk.cols()], &hk.values()[(b + 1) * hk.cols()]);
      }
      if (K == 1) {
        survival += pch_loss(h[0], r.duration, r.event > 0 ? 1 : 0, model.grid()) / static_cast<double>(n);
      } else if (r.event > 0) {
        const double l = competing_record_loss(h, r.duration, r.event, model.grid());
        if (ips) {
          const double p = std::max(pi(start + b, static_cast<std::size_t>(r.event - 1)), propensity->floor());
          survival += l / (static_cast<double>(n * K) * p);
        } else {
          survival += l / observed;
        }
      }
      const double y = fwd.mortality.value()[b];
      mp -= (r.event > 0 ? std::log(y) : std::log(1.0 - y)) / static_cast<double>(n);
      const double d = fwd.length_of_stay.value()[b] - r.duration / model.grid().horizon();
      ls += d * d / static_cast<double>(n);
    }
  }
  const auto [g1, g2] = schedule.gammas(epoch);
  return LossBreakdown{survival + g1 * mp + g2 * ls, survival, mp, ls, g1, g2};
}

double survival_loss(const SurvTraceModel& model, const std::optional<PropensityModel>& propensity,
                     const Dataset& data, bool use_ips) {
  AnnealSchedule none;
  none.mode = AnnealMode::constant;
  none.initial_mp = none.initial_ls = 0.0;
  return dataset_loss(model, propensity, data, use_ips, none, 0).survival;
}

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& validation_set,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.size() == 0 || validation_set.size() == 0) throw ContractError("training and validation sets must be nonempty");
  const int K = train_set.num_events;

  std::vector<double> durations;
  for (const auto& r : train_set.records) durations.push_back(r.duration);
  TimeGrid grid = build_time_grid(durations, config.time_bins, config.grid_scheme);

  TrainResult result{SurvTraceModel(train_set.schema, grid, K, config.model, config.seed), std::nullopt, {}};
  SurvTraceModel& model = result.model;
  const bool ips = K > 1 && config.use_ips;
  Tensor train_pi;
  if (ips) {
    result.propensity = fit_propensity(train_set, config.propensity);
    train_pi = result.propensity->predict(train_set.schema, train_set.records);
  }

  AdamOptions opts;
  opts.learning_rate = config.learning_rate;
  opts.weight_decay = config.weight_decay;
  Adam adam(model.parameters(), opts);
  const AnnealSchedule schedule = config.schedule();

  TrainHistory& history = result.history;
  history.initial_validation = survival_loss(model, result.propensity, validation_set, config.use_ips);

  std::mt19937_64 rng(config.seed ^ 0x5eedf00dULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  ParameterStore best = model.parameters();
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batches) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const auto batch = batch_of(train_set.records, idx);
      const SurvivalTargets targets = make_targets(batch, grid);

      Tape tape;
      ForwardResult fwd = model.forward(tape, batch);
      if (!outputs_usable(fwd)) {
        throw DivergenceError("network outputs left the finite range at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batches));
      }
      Tensor pi;
      if (ips) pi = rows_of(train_pi, idx);
      Var surv = survival_term(fwd, targets, ips ? &pi : nullptr, ips ? result.propensity->floor() : 0.0);
      Var mp = mp_loss(fwd.mortality, targets);
      Var ls = ls_loss(fwd.length_of_stay, ls_targets(targets, grid));
      TotalLoss total = total_loss(surv, mp, ls, schedule, epoch);
      if (!std::isfinite(total.breakdown.total)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches));
      }
      model.parameters().zero_grad();
      tape.backward(total.value);
      adam.step();

      rec.train.total += total.breakdown.total;
      rec.train.survival += total.breakdown.survival;
      rec.train.mp += total.breakdown.mp;
      rec.train.ls += total.breakdown.ls;
      rec.train.gamma_mp = total.breakdown.gamma_mp;
      rec.train.gamma_ls = total.breakdown.gamma_ls;
    }
    const double nb = static_cast<double>(batches);
    rec.train.total /= nb;
    rec.train.survival /= nb;
    rec.train.mp /= nb;
    rec.train.ls /= nb;

    rec.validation = survival_loss(model, result.propensity, validation_set, config.use_ips);
    if (!std::isfinite(rec.validation)) {
      throw DivergenceError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    if (epoch == 0 || rec.validation < history.best_validation) {
      rec.improved = true;
      history.best_validation = rec.validation;
      history.best_epoch = epoch;
      best = model.parameters();
      since_best = 0;
    } else {
      ++since_best;
    }
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(epoch, rec);
    if (since_best >= config.patience) {
      history.stopped_early = epoch + 1 < config.max_epochs;
      break;
    }
  }
  model.parameters().assign_values(best);
  return result;
}

std::vector<double> event_times(std::span<const SurvivalRecord> records) {
  std::vector<double> out;
  for (const auto& r : records) {
    if (r.event > 0) out.push_back(r.duration);
  }
  return out;
}

namespace {

// hazards[k] is n×m for the whole record set.
std::vector<Tensor> hazards_for(const SurvTraceModel& model, std::span<const SurvivalRecord> records) {
  const auto K = static_cast<std::size_t>(model.num_events());
  const std::size_t m = model.grid().bins();
  std::vector<Tensor> out(K, Tensor({records.size(), m}));
  for (std::size_t start = 0; start < records.size(); start += kEvalChunk) {
    const std::size_t stop = std::min(records.size(), start + kEvalChunk);
    const auto batch = batch_of(records.subspan(start, stop - start));
    const auto h = model.predict_hazards(batch);
    for (std::size_t k = 0; k < K; ++k) {
      std::copy(h[k].values().begin(), h[k].values().end(), out[k].values().begin() + static_cast<std::ptrdiff_t>(start * m));
    }
  }
  return out;
}

}  // namespace

MetricsReport evaluate(const SurvTraceModel& model, std::span<const SurvivalRecord> test,
                       const CensoringEstimate& censoring, std::span<const double> quantiles,
                       std::span<const double> reference_event_times) {
  if (test.empty()) throw ContractError("evaluation on an empty test set");
  const auto horizons = quantile_horizons(reference_event_times, quantiles);
  const auto hazards = hazards_for(model, test);
  const std::size_t m = model.grid().bins();
  std::vector<double> durations;
  std::vector<int> events;
  for (const auto& r : test) {
    durations.push_back(r.duration);
    events.push_back(r.event);
  }
  MetricsReport report;
  for (int k = 1; k <= model.num_events(); ++k) {
    EventMetrics em;
    em.event = k;
    const Tensor& hk = hazards[static_cast<std::size_t>(k - 1)];
    for (std::size_t q = 0; q < horizons.size(); ++q) {
      std::vector<double> surv(test.size());
      for (std::size_t i = 0; i < test.size(); ++i) {
        surv[i] = survival_from_hazards(std::span(&hk.values()[i * m], m), model.grid(), horizons[q]);
      }
      const auto c = ctd(surv, durations, events, horizons[q], k, censoring);
      em.horizons.push_back({quantiles[q], horizons[q], c.value, c.comparable_pairs});
    }
    report.events.push_back(std::move(em));
  }
  return report;
}

std::size_t CurvePrediction::size() const {
  std::size_t n = 0;
  for (const auto& r : values) {
    for (const auto& e : r) n += e.size();
  }
  return n;
}

CurvePrediction predict(const SurvTraceModel& model, std::span<const SurvivalRecord> records,
                        std::span<const double> times) {
  CurvePrediction out;
  out.times.assign(times.begin(), times.end());
  if (records.empty()) return out;
  const auto hazards = hazards_for(model, records);
  const std::size_t m = model.grid().bins();
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::vector<std::vector<double>> per_event;
    for (const Tensor& hk : hazards) {
      std::vector<double> s;
      for (double t : times) s.push_back(survival_from_hazards(std::span(&hk.values()[i * m], m), model.grid(), t));
      per_event.push_back(std::move(s));
    }
    out.values.push_back(std::move(per_event));
  }
  return out;
}

}  // namespace survtrace
