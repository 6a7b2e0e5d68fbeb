#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "survtrace/tensor.hpp"

namespace survtrace {

// A trainable array together with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad = Tensor(value.shape()); }
};

// Ordered, name-addressable collection of parameters. Addresses are stable
// for the lifetime of the store, so optimizers and tapes may hold pointers.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore& other);
  ParameterStore& operator=(const ParameterStore& other);
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter& add(std::string name, Tensor value);
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  std::size_t scalar_count() const;

  // Copies every value (not gradient) from `other`; names and shapes must match.
  void assign_values(const ParameterStore& other);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode gradient tape. One tape per forward pass; a tape constructed
// with record_gradients=false stores values only (inference).
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var watch(Parameter& parameter);

  // Runs the reverse sweep from a scalar loss and accumulates into each
  // watched Parameter::grad. Node gradients are reset first, so repeated
  // calls on the same tape produce identical contributions.
  void backward(const Var& loss);

  bool recording() const { return recording_; }
  std::size_t node_count() const { return nodes_.size(); }

  // Op authoring interface.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  // Lazily allocated accumulation target; null when the node needs no gradient.
  Tensor* grad_target(std::size_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* parameter = nullptr;
    bool needs_grad = false;
  };
  std::deque<Node> nodes_;
  bool recording_;
};

// ---- differentiable operations ------------------------------------------
// All operate on matrices (rank-2 view) unless stated otherwise.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
// Elementwise product with a constant mask/weight of the same shape.
Var mul(const Var& a, const Tensor& constant);
// Adds a 1×n row vector to every row of an m×n matrix.
Var add_row(const Var& a, const Var& row);
// scale * a + shift, elementwise.
Var affine(const Var& a, double scale, double shift = 0.0);

Var selu(const Var& a);
Var softplus(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var log(const Var& a);
Var exp(const Var& a);
Var square(const Var& a);

Var softmax_rows(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
Var row_sum(const Var& a);

Var concat_cols(std::span<const Var> parts);
Var slice_cols(const Var& a, std::size_t start, std::size_t count);
Var reshape(const Var& a, Shape shape);

// Row lookup: output row i is table row indices[i].
Var gather_rows(const Var& table, std::span<const std::size_t> indices);
// Element lookup: output (i, 0) is a(i, cols[i]).
Var pick(const Var& a, std::span<const std::size_t> cols);
// Each part is B×d; output is (B·F)×d with row b·F + f taken from parts[f] row b.
Var interleave_rows(std::span<const Var> parts);

// Block-diagonal products over groups of `block` consecutive rows:
//   block_matmul_nt: (G·block)×d, (G·block)×d -> (G·block)×block, A_g B_gᵀ
//   block_matmul:    (G·block)×block, (G·block)×d -> (G·block)×d, A_g B_g
Var block_matmul_nt(const Var& a, const Var& b, std::size_t block);
Var block_matmul(const Var& a, const Var& b, std::size_t block);

// Plain (non-recorded) helpers shared with tests and inference code.
namespace scalar {
double selu(double x);
double softplus(double x);
double sigmoid(double x);
inline constexpr double kSeluLambda = 1.0507009873554804934193349852946;
inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
}  // namespace scalar

}  // namespace survtrace
