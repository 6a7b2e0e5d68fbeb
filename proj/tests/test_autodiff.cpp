#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "support.hpp"
#include "survtrace/autodiff.hpp"
#include "survtrace/errors.hpp"
#include "survtrace/optim.hpp"

using namespace survtrace;
using survtrace::testing::check_gradients;
using survtrace::testing::random_tensor;

namespace {

struct OpCase {
  std::string name;
  std::vector<Shape> inputs;
  double lo = -2.0;
  double hi = 2.0;
  std::function<Var(Tape&, const std::vector<Var>&)> fn;
};

std::vector<OpCase> op_cases() {
  const std::vector<std::size_t> gather_idx{2, 0, 2, 1};
  const std::vector<std::size_t> pick_idx{1, 0, 3};
  return {
      {"matmul", {{3, 4}, {4, 2}}, -2, 2, [](Tape&, const auto& v) { return matmul(v[0], v[1]); }},
      {"add", {{3, 2}, {3, 2}}, -2, 2, [](Tape&, const auto& v) { return add(v[0], v[1]); }},
      {"sub", {{3, 2}, {3, 2}}, -2, 2, [](Tape&, const auto& v) { return sub(v[0], v[1]); }},
      {"mul", {{3, 2}, {3, 2}}, -2, 2, [](Tape&, const auto& v) { return mul(v[0], v[1]); }},
      {"mul_const", {{3, 2}}, -2, 2,
       [](Tape&, const auto& v) { return mul(v[0], Tensor::matrix(3, 2, {1, -2, 0.5, 3, 0, 1})); }},
      {"add_row", {{4, 3}, {1, 3}}, -2, 2, [](Tape&, const auto& v) { return add_row(v[0], v[1]); }},
      {"affine", {{2, 3}}, -2, 2, [](Tape&, const auto& v) { return affine(v[0], -1.5, 0.25); }},
      {"selu", {{3, 3}}, -2, 2, [](Tape&, const auto& v) { return selu(v[0]); }},
      {"softplus", {{3, 3}}, -4, 4, [](Tape&, const auto& v) { return softplus(v[0]); }},
      {"sigmoid", {{3, 3}}, -4, 4, [](Tape&, const auto& v) { return sigmoid(v[0]); }},
      {"relu", {{3, 3}}, -2, 2, [](Tape&, const auto& v) { return relu(v[0]); }},
      {"log", {{3, 3}}, 0.2, 3, [](Tape&, const auto& v) { return log(v[0]); }},
      {"exp", {{3, 3}}, -2, 2, [](Tape&, const auto& v) { return exp(v[0]); }},
      {"square", {{3, 3}}, -2, 2, [](Tape&, const auto& v) { return square(v[0]); }},
      {"softmax_rows", {{3, 4}}, -3, 3, [](Tape&, const auto& v) { return softmax_rows(v[0]); }},
      {"sum", {{3, 4}}, -2, 2, [](Tape&, const auto& v) { return sum(v[0]); }},
      {"mean", {{3, 4}}, -2, 2, [](Tape&, const auto& v) { return mean(v[0]); }},
      {"row_sum", {{3, 4}}, -2, 2, [](Tape&, const auto& v) { return row_sum(v[0]); }},
      {"concat_cols", {{3, 2}, {3, 1}, {3, 3}}, -2, 2,
       [](Tape&, const auto& v) { return concat_cols(std::span<const Var>(v)); }},
      {"slice_cols", {{3, 5}}, -2, 2, [](Tape&, const auto& v) { return slice_cols(v[0], 1, 3); }},
      {"reshape", {{3, 4}}, -2, 2, [](Tape&, const auto& v) { return reshape(v[0], {2, 6}); }},
      {"gather_rows", {{3, 2}}, -2, 2, [gather_idx](Tape&, const auto& v) { return gather_rows(v[0], gather_idx); }},
      {"pick", {{3, 4}}, -2, 2, [pick_idx](Tape&, const auto& v) { return pick(v[0], pick_idx); }},
      {"interleave_rows", {{2, 3}, {2, 3}, {2, 3}}, -2, 2,
       [](Tape&, const auto& v) { return interleave_rows(std::span<const Var>(v)); }},
      {"block_matmul_nt", {{6, 2}, {6, 2}}, -2, 2,
       [](Tape&, const auto& v) { return block_matmul_nt(v[0], v[1], 3); }},
      {"block_matmul", {{6, 3}, {6, 2}}, -2, 2, [](Tape&, const auto& v) { return block_matmul(v[0], v[1], 3); }},
  };
}

// Nudges entries away from the relu kink so central differences stay one-sided-free.
void avoid_kink(Tensor& t) {
  for (double& x : t.values()) {
    if (std::abs(x) < 1e-3) x = x < 0 ? -0.1 : 0.1;
  }
}

}  // namespace

TEST_CASE("every op's gradient matches central differences on 50 random inputs") {
  std::mt19937_64 rng(20240601);
  for (const auto& op : op_cases()) {
    SUBCASE(op.name.c_str()) {
      double worst = 0.0;
      for (int trial = 0; trial < 50; ++trial) {
        ParameterStore store;
        for (std::size_t i = 0; i < op.inputs.size(); ++i) {
          Tensor x = random_tensor(op.inputs[i], rng, op.lo, op.hi);
          if (op.name == "relu") avoid_kink(x);
          store.add("in" + std::to_string(i), std::move(x));
        }
        // A fixed random projection keeps every output entry in play.
        Tensor probe;
        {
          Tape tape(false);
          std::vector<Var> vars;
          for (std::size_t i = 0; i < store.size(); ++i) vars.push_back(tape.watch(store[i]));
          probe = random_tensor(op.fn(tape, vars).shape(), rng);
        }
        const auto report = check_gradients(store, [&](Tape& tape) {
          std::vector<Var> vars;
          for (std::size_t i = 0; i < store.size(); ++i) vars.push_back(tape.watch(store[i]));
          return sum(mul(op.fn(tape, vars), probe));
        });
        worst = std::max(worst, report.worst_relative);
      }
      CHECK(worst < 1e-4);
    }
  }
}

TEST_CASE("matmul examples") {
  Tape tape;
  const Var eye = tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  const Var col = tape.constant(Tensor::matrix(2, 1, {3, 4}));
  const Var out = matmul(eye, col);
  CHECK(out.value()(0, 0) == 3);
  CHECK(out.value()(1, 0) == 4);
  const Var dot = matmul(tape.constant(Tensor::matrix(1, 2, {1, 2})), col);
  CHECK(dot.value()(0, 0) == 11);
}

TEST_CASE("matmul gradient of the output sum is ones times b transpose") {
  std::mt19937_64 rng(5);
  ParameterStore store;
  Parameter& a = store.add("a", random_tensor({3, 4}, rng));
  const Tensor b = random_tensor({4, 2}, rng);
  Tape tape;
  tape.backward(sum(matmul(tape.watch(a), tape.constant(b))));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(a.grad(i, j) == doctest::Approx(b(j, 0) + b(j, 1)).epsilon(1e-14));
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape tape;
  try {
    (void)matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3})));
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3] x [2x3]") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  Tape tape;
  auto row = [&](double a, double b) { return softmax_rows(tape.constant(Tensor::matrix(1, 2, {a, b}))).value(); };
  CHECK(row(0, 0)[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(row(1000, 1000)[1] == doctest::Approx(0.5).epsilon(1e-15));
  const Tensor s = row(0, std::log(3.0));
  CHECK(s[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(s[1] == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("softmax rows sum to one and ignore row shifts") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor x = random_tensor({4, 5}, rng, -50, 50);
    Tensor shifted = x;
    for (std::size_t c = 0; c < 5; ++c) shifted(2, c) += 123.25;
    Tape tape;
    const Tensor a = softmax_rows(tape.constant(x)).value();
    const Tensor b = softmax_rows(tape.constant(shifted)).value();
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        CHECK(a(r, c) >= 0.0);
        total += a(r, c);
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
    for (std::size_t c = 0; c < 5; ++c) CHECK(std::abs(a(2, c) - b(2, c)) <= 1e-12);
  }
}

TEST_CASE("selu values") {
  CHECK(scalar::selu(0.0) == 0.0);
  CHECK(scalar::selu(1.0) == doctest::Approx(1.0507009873554805).epsilon(1e-15));
  CHECK(scalar::selu(-50.0) == doctest::Approx(-scalar::kSeluLambda * scalar::kSeluAlpha).epsilon(1e-12));
  CHECK(-scalar::kSeluLambda * scalar::kSeluAlpha == doctest::Approx(-1.7581).epsilon(1e-4));
}

TEST_CASE("softplus values") {
  CHECK(scalar::softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(scalar::softplus(100.0) == doctest::Approx(100.0).epsilon(1e-15));
  CHECK(std::isfinite(scalar::softplus(1000.0)));
  CHECK(scalar::softplus(-40.0) > 0.0);
  ParameterStore store;
  Parameter& p = store.add("x", Tensor::scalar(0.0));
  Tape tape;
  tape.backward(sum(softplus(tape.watch(p))));
  CHECK(p.grad[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("selu and softplus are monotone") {
  double prev_selu = -1e300, prev_sp = -1e300;
  for (double x = -30.0; x <= 30.0; x += 0.01) {
    CHECK(scalar::selu(x) >= prev_selu);
    CHECK(scalar::softplus(x) >= prev_sp);
    prev_selu = scalar::selu(x);
    prev_sp = scalar::softplus(x);
  }
}

TEST_CASE("backward of sum gives ones") {
  std::mt19937_64 rng(1);
  ParameterStore store;
  Parameter& p = store.add("p", random_tensor({3, 5}, rng));
  Tape tape;
  tape.backward(sum(tape.watch(p)));
  for (double g : p.grad.values()) CHECK(g == 1.0);
}

TEST_CASE("backward requires a scalar loss") {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor({2, 2}, 1.0));
  Tape tape;
  CHECK_THROWS_AS(tape.backward(tape.watch(p)), ContractError);
  Tape inference(false);
  CHECK_THROWS_AS(inference.backward(sum(inference.watch(p))), ContractError);
}

TEST_CASE("softplus chain gradient matches finite differences") {
  std::mt19937_64 rng(11);
  ParameterStore store;
  store.add("w", random_tensor({1, 3}, rng));
  const Tensor x = random_tensor({3, 1}, rng);
  const auto report = check_gradients(
      store, [&](Tape& tape) { return sum(softplus(matmul(tape.watch(store.at("w")), tape.constant(x)))); });
  CHECK(report.worst_relative < 1e-4);
}

TEST_CASE("gradients of summed disjoint losses add up") {
  std::mt19937_64 rng(12);
  ParameterStore store;
  Parameter& p = store.add("p", random_tensor({2, 3}, rng));
  auto f = [](const Var& v) { return sum(square(v)); };
  auto g = [](const Var& v) { return sum(softplus(v)); };
  Tape t1;
  t1.backward(f(t1.watch(p)));
  const Tensor gf = p.grad;
  p.zero_grad();
  Tape t2;
  t2.backward(g(t2.watch(p)));
  const Tensor gg = p.grad;
  p.zero_grad();
  Tape t3;
  const Var v = t3.watch(p);
  t3.backward(add(f(v), g(v)));
  for (std::size_t i = 0; i < p.grad.size(); ++i) CHECK(p.grad[i] == doctest::Approx(gf[i] + gg[i]).epsilon(1e-14));
}

TEST_CASE("backward is bitwise deterministic") {
  std::mt19937_64 rng(13);
  ParameterStore store;
  Parameter& a = store.add("a", random_tensor({4, 3}, rng));
  Parameter& b = store.add("b", random_tensor({3, 3}, rng));
  Tape tape;
  const Var loss = sum(softmax_rows(selu(matmul(tape.watch(a), tape.watch(b)))));
  store.zero_grad();
  tape.backward(loss);
  const Tensor ga = a.grad, gb = b.grad;
  store.zero_grad();
  tape.backward(loss);
  CHECK(a.grad.data() == ga.data());
  CHECK(b.grad.data() == gb.data());
}

TEST_CASE("inference tapes record values without gradients") {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::matrix(1, 2, {1, 2}));
  Tape tape(false);
  const Var y = square(tape.watch(p));
  CHECK(y.value()[1] == 4.0);
}

TEST_CASE("parameter store lookup and copy") {
  ParameterStore store;
  store.add("w", Tensor({2, 2}, 1.0));
  CHECK_THROWS_AS(store.add("w", Tensor({1, 1})), ContractError);
  CHECK(store.find("missing") == nullptr);
  ParameterStore copy = store;
  copy.at("w").value[0] = 9.0;
  CHECK(store.at("w").value[0] == 1.0);
  store.assign_values(copy);
  CHECK(store.at("w").value[0] == 9.0);
  CHECK(store.scalar_count() == 4);
}

TEST_CASE("adam first step with unit gradient moves by about lr") {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor({2, 2}, 1.0));
  AdamOptions opts;
  opts.learning_rate = 1e-3;
  Adam adam(store, opts);
  adam.step({Tensor({2, 2}, 1.0)});
  for (double v : p.value.values()) CHECK(v == doctest::Approx(1.0 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(adam.step_count() == 1);
  CHECK(adam.first_moment(0).shape() == p.value.shape());
  CHECK(adam.second_moment(0).shape() == p.value.shape());
}

TEST_CASE("adam with zero gradient and no decay leaves parameters") {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::matrix(1, 3, {1, -2, 3}));
  Adam adam(store, AdamOptions{});
  for (int i = 0; i < 5; ++i) adam.step({Tensor({1, 3})});
  CHECK(p.value.data() == std::vector<double>{1, -2, 3});
  CHECK(adam.step_count() == 5);
}

TEST_CASE("adam decoupled weight decay shrinks by lr * d * theta") {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::matrix(1, 2, {2.0, -4.0}));
  AdamOptions opts;
  opts.learning_rate = 0.01;
  opts.weight_decay = 0.1;
  Adam adam(store, opts);
  adam.step({Tensor({1, 2})});
  CHECK(p.value[0] == doctest::Approx(2.0 - 0.01 * 0.1 * 2.0).epsilon(1e-15));
  CHECK(p.value[1] == doctest::Approx(-4.0 + 0.01 * 0.1 * 4.0).epsilon(1e-15));
}

TEST_CASE("adam rejects mismatched gradients") {
  ParameterStore store;
  store.add("p", Tensor({2, 2}));
  Adam adam(store, AdamOptions{});
  CHECK_THROWS_AS(adam.step({Tensor({4, 1})}), DimensionError);
  CHECK_THROWS(adam.step({}));
}

TEST_CASE("adam uses accumulated parameter gradients") {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor::matrix(1, 1, {3.0}));
  Adam adam(store, AdamOptions{0.1, 0.9, 0.999, 1e-8, 0.0});
  for (int i = 0; i < 200; ++i) {
    store.zero_grad();
    Tape tape;
    tape.backward(sum(square(tape.watch(p))));
    adam.step();
  }
  CHECK(std::abs(p.value[0]) < 0.1);
}

TEST_CASE("xavier init stays in bounds") {
  std::mt19937_64 rng(4);
  const Tensor w = xavier_uniform(10, 6, rng);
  const double a = std::sqrt(6.0 / 16.0);
  CHECK(w.shape() == Shape{10, 6});
  for (double v : w.values()) CHECK(std::abs(v) <= a);
}
