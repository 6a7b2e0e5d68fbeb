#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "survtrace/autodiff.hpp"

namespace survtrace {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Decoupled: applied to the parameter directly, never folded into the gradient.
  double weight_decay = 0.0;
};

// Bias-corrected Adam with decoupled weight decay over a ParameterStore.
class Adam {
 public:
  Adam(ParameterStore& params, AdamOptions options);

  // Uses the gradients accumulated in each Parameter::grad.
  void step();
  // Uses explicitly supplied gradients, one per parameter in store order.
  void step(const std::vector<Tensor>& gradients);

  std::uint64_t step_count() const { return steps_; }
  const AdamOptions& options() const { return options_; }
  const Tensor& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor& second_moment(std::size_t i) const { return v_[i]; }

 private:
  void apply(std::size_t index, const Tensor& grad);

  ParameterStore* params_;
  AdamOptions options_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t steps_ = 0;
};

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

}  // namespace survtrace
