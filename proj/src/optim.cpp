#include "survtrace/optim.hpp"

#include <cmath>

#include "survtrace/errors.hpp"

namespace survtrace {

Adam::Adam(ParameterStore& params, AdamOptions options) : params_(&params), options_(options) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params[i].value.shape());
    v_.emplace_back(params[i].value.shape());
  }
}

void Adam::step() {
  ++steps_;
  for (std::size_t i = 0; i < params_->size(); ++i) apply(i, (*params_)[i].grad);
}

void Adam::step(const std::vector<Tensor>& gradients) {
  if (gradients.size() != params_->size()) {
    throw DimensionError("adam: " + std::to_string(gradients.size()) + " gradients for " +
                         std::to_string(params_->size()) + " parameters");
  }
  for (std::size_t i = 0; i < gradients.size(); ++i) {
    require_same_shape((*params_)[i].value, gradients[i], "adam");
  }
  ++steps_;
  for (std::size_t i = 0; i < gradients.size(); ++i) apply(i, gradients[i]);
}

void Adam::apply(std::size_t index, const Tensor& grad) {
  Parameter& p = (*params_)[index];
  require_same_shape(p.value, grad, "adam");
  const auto& o = options_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  Tensor& m = m_[index];
  Tensor& v = v_[index];
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double g = grad[i];
    m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g;
    v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    p.value[i] -= o.learning_rate * (mhat / (std::sqrt(vhat) + o.epsilon) + o.weight_decay * p.value[i]);
  }
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor out({fan_in, fan_out});
  for (double& v : out.values()) v = dist(rng);
  return out;
}

}  // namespace survtrace
