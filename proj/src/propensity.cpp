#include "survtrace/propensity.hpp"

#include <algorithm>
#include <cmath>

#include "survtrace/autodiff.hpp"
#include "survtrace/errors.hpp"

namespace survtrace {

PropensityModel::PropensityModel(std::vector<std::vector<double>> weights, std::vector<double> offsets,
                                 double floor, bool normalize)
    : weights_(std::move(weights)), offsets_(std::move(offsets)), floor_(floor), normalize_(normalize) {
  if (weights_.size() != offsets_.size() || offsets_.empty()) {
    throw ContractError("propensity model needs one weight vector and offset per event");
  }
  for (const auto& w : weights_) {
    if (w.size() != weights_[0].size()) throw ContractError("propensity weight vectors differ in length");
  }
  if (!(floor_ >= 0.0 && floor_ < 1.0)) throw ContractError("propensity floor must lie in [0, 1)");
  if (normalize_ && floor_ * static_cast<double>(offsets_.size()) > 1.0) {
    throw ContractError("propensity floor too large to normalize across events");
  }
}

std::vector<double> PropensityModel::predict(std::span<const double> x) const {
  if (x.size() != dimension()) {
    throw DimensionError("propensity model expects " + std::to_string(dimension()) + " covariates, got " +
                         std::to_string(x.size()));
  }
  const std::size_t k = offsets_.size();
  std::vector<double> pi(k);
  for (std::size_t e = 0; e < k; ++e) {
    double z = offsets_[e];
    for (std::size_t j = 0; j < x.size(); ++j) z += weights_[e][j] * x[j];
    pi[e] = scalar::sigmoid(z);
  }
  auto clip = [&] {
    for (double& p : pi) p = std::clamp(p, floor_, 1.0);
  };
  if (!normalize_) {
    clip();
    return pi;
  }
  // Entries pinned at the floor stay there; the rest share the remaining
  // mass in proportion to their raw scores. Pinning only grows, so this ends.
  std::vector<bool> pinned(k, false);
  for (;;) {
    double free_mass = 1.0, free_raw = 0.0;
    for (std::size_t e = 0; e < k; ++e) {
      if (pinned[e]) {
        free_mass -= floor_;
      } else {
        free_raw += pi[e];
      }
    }
    bool changed = false;
    for (std::size_t e = 0; e < k; ++e) {
      if (!pinned[e] && pi[e] / free_raw * free_mass < floor_) {
        pinned[e] = true;
        changed = true;
      }
    }
    if (changed) continue;
    for (std::size_t e = 0; e < k; ++e) pi[e] = pinned[e] ? floor_ : pi[e] / free_raw * free_mass;
    break;
  }
  return pi;
}

Tensor PropensityModel::predict(const CovariateSchema& schema, std::span<const SurvivalRecord> records) const {
  if (records.empty()) throw ContractError("propensity prediction on zero records");
  const auto k = static_cast<std::size_t>(num_events());
  Tensor out({records.size(), k});
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto pi = predict(flatten_covariates(schema, records[i]));
    for (std::size_t e = 0; e < k; ++e) out(i, e) = pi[e];
  }
  return out;
}

namespace {

struct LogisticFit {
  std::vector<double> w;
  double b = 0.0;
};

double objective(std::span<const std::vector<double>> x, const std::vector<double>& y, const LogisticFit& f,
                 double l2) {
  double loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double z = f.b;
    for (std::size_t j = 0; j < f.w.size(); ++j) z += f.w[j] * x[i][j];
    // log(1 + e^z) - y z, stable for either sign of z.
    loss += scalar::softplus(z) - y[i] * z;
  }
  loss /= static_cast<double>(x.size());
  double reg = 0.0;
  for (double v : f.w) reg += v * v;
  return loss + 0.5 * l2 * reg;
}

LogisticFit fit_binary(std::span<const std::vector<double>> x, const std::vector<double>& y,
                       const PropensityConfig& cfg, double step) {
  const std::size_t n = x.size(), p = x.empty() ? 0 : x[0].size();
  LogisticFit f;
  f.w.assign(p, 0.0);
  // Start the intercept at the prior log-odds so intercept-only data converges at once.
  double prior = 0.0;
  for (double v : y) prior += v;
  prior = std::clamp(prior / static_cast<double>(n), 1e-6, 1.0 - 1e-6);
  f.b = std::log(prior / (1.0 - prior));
  double prev = objective(x, y, f, cfg.l2);
  std::vector<double> gw(p);
  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double z = f.b;
      for (std::size_t j = 0; j < p; ++j) z += f.w[j] * x[i][j];
      const double r = scalar::sigmoid(z) - y[i];
      gb += r;
      for (std::size_t j = 0; j < p; ++j) gw[j] += r * x[i][j];
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < p; ++j) f.w[j] -= step * (gw[j] * inv + cfg.l2 * f.w[j]);
    f.b -= step * gb * inv;
    const double cur = objective(x, y, f, cfg.l2);
    if (std::abs(prev - cur) < cfg.tolerance) break;
    prev = cur;
  }
  return f;
}

}  // namespace

PropensityModel fit_propensity(std::span<const std::vector<double>> features, std::span<const int> labels,
                               int num_events, const PropensityConfig& config) {
  if (num_events < 1) throw ContractError("propensity fit needs at least one event type");
  if (features.size() != labels.size()) throw DimensionError("propensity fit: feature and label counts differ");
  if (features.empty()) throw DataError("propensity fit: no uncensored records");
  const std::size_t p = features[0].size();
  double max_norm = 0.0;
  for (const auto& row : features) {
    if (row.size() != p) throw DimensionError("propensity fit: ragged feature rows");
    double s = 1.0;
    for (double v : row) s += v * v;
    max_norm = std::max(max_norm, s);
  }
  std::vector<int> counts(static_cast<std::size_t>(num_events) + 1, 0);
  for (int e : labels) {
    if (e < 1 || e > num_events) throw DataError("propensity fit: label " + std::to_string(e) + " out of range");
    ++counts[static_cast<std::size_t>(e)];
  }
  for (int k = 1; k <= num_events; ++k) {
    if (counts[static_cast<std::size_t>(k)] == 0) {
      throw DataError("propensity fit: event class " + std::to_string(k) + " has no records");
    }
  }
  const double step = 1.0 / (0.25 * max_norm + config.l2);
  std::vector<std::vector<double>> weights;
  std::vector<double> offsets;
  for (int k = 1; k <= num_events; ++k) {
    std::vector<double> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == k ? 1.0 : 0.0;
    LogisticFit f = fit_binary(features, y, config, step);
    weights.push_back(std::move(f.w));
    offsets.push_back(f.b);
  }
  return PropensityModel(std::move(weights), std::move(offsets), config.floor, config.normalize);
}

PropensityModel fit_propensity(const Dataset& data, const PropensityConfig& config) {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (const auto& r : data.records) {
    if (r.event <= 0) continue;
    x.push_back(flatten_covariates(data.schema, r));
    y.push_back(r.event);
  }
  return fit_propensity(x, y, data.num_events, config);
}

}  // namespace survtrace
