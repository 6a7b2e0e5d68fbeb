#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "survtrace/autodiff.hpp"
#include "survtrace/data.hpp"

namespace survtrace::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(rng);
  return t;
}

struct GradientReport {
  double worst_relative = 0.0;
  std::string worst_name;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

// Compares tape gradients of a scalar loss against central differences for
// every entry of every parameter in `store`.
inline GradientReport check_gradients(ParameterStore& store, const std::function<Var(Tape&)>& loss,
                                      double step = 1e-6, double absolute_floor = 1e-7) {
  store.zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  auto evaluate = [&]() {
    Tape tape(false);
    return loss(tape).value()[0];
  };
  GradientReport report;
  for (std::size_t p = 0; p < store.size(); ++p) {
    Parameter& param = store[p];
    for (std::size_t i = 0; i < param.value.size(); ++i) {
      const double saved = param.value[i];
      param.value[i] = saved + step;
      const double up = evaluate();
      param.value[i] = saved - step;
      const double down = evaluate();
      param.value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = param.grad[i];
      const double scale = std::max({std::abs(numeric), std::abs(analytic), absolute_floor});
      const double rel = std::abs(numeric - analytic) / scale;
      ++report.checked;
      if (rel > report.worst_relative) {
        report.worst_relative = rel;
        report.worst_name = param.name;
        report.worst_index = i;
        report.analytic = analytic;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

// Schema with `numerical` standardized-identity fields and 3-level categoricals.
inline CovariateSchema small_schema(std::size_t numerical, std::size_t categorical) {
  std::vector<FieldDescriptor> fields;
  for (std::size_t j = 0; j < categorical; ++j) {
    FieldDescriptor f;
    f.name = "c" + std::to_string(j + 1);
    f.kind = FieldKind::categorical;
    f.vocabulary = {"a", "b", "c"};
    fields.push_back(f);
  }
  for (std::size_t j = 0; j < numerical; ++j) {
    FieldDescriptor f;
    f.name = "x" + std::to_string(j + 1);
    fields.push_back(f);
  }
  return CovariateSchema(std::move(fields));
}

inline std::vector<SurvivalRecord> random_records(const CovariateSchema& schema, std::size_t n, int events,
                                                  double horizon, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> t(0.01, horizon * 1.1);
  std::uniform_int_distribution<int> e(0, events);
  std::vector<SurvivalRecord> out(n);
  for (auto& r : out) {
    for (std::size_t j = 0; j < schema.numerical_count(); ++j) r.numerical.push_back(z(rng));
    for (std::size_t j = 0; j < schema.categorical_count(); ++j) {
      std::uniform_int_distribution<std::size_t> level(0, schema.categorical(j).cardinality());
      r.categorical.push_back(level(rng));
    }
    r.duration = t(rng);
    r.event = e(rng);
  }
  return out;
}

}  // namespace survtrace::testing
