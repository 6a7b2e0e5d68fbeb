#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace survtrace {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Almost everything in the model is a
// matrix; rank-1 and rank-3 shapes are only used at the edges.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<double> values);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  // Matrix view: leading dimension by the product of the rest.
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return rows() == 0 ? 0 : size() / rows(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  const std::vector<double>& data() const { return values_; }

  // Same values, new shape. Element counts must agree.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;
  void fill(double value);

  // In-place accumulate; shapes must match exactly.
  Tensor& operator+=(const Tensor& other);

 private:
  Shape shape_;
  std::vector<double> values_;
};

std::size_t shape_numel(const Shape& shape);

// Throws DimensionError naming both shapes unless they are identical.
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

}  // namespace survtrace
