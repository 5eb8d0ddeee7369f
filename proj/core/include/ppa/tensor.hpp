// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ppa {

/// Thrown when operand shapes do not agree. The message names both shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown for a degenerate input such as normalizing a zero vector.
class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

using Shape = std::vector<int>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major float32 tensor. Value type: copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor filled(Shape shape, float value);
  static Tensor scalar(float value) { return Tensor({1}, {value}); }
  /// Builds a 2-D tensor from nested rows; all rows must have equal length.
  static Tensor matrix(const std::vector<std::vector<float>>& rows);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Last dimension; a rank-1 tensor is one row.
  int cols() const { return shape_.empty() ? 0 : shape_.back(); }
  /// Product of every dimension but the last.
  int rows() const;

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float* ptr() { return data_.data(); }
  const float* ptr() const { return data_.data(); }
  std::span<float> row(int r) { return {data_.data() + static_cast<std::size_t>(r) * cols(), static_cast<std::size_t>(cols())}; }
  std::span<const float> row(int r) const {
    return {data_.data() + static_cast<std::size_t>(r) * cols(), static_cast<std::size_t>(cols())};
  }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }
  float& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  float at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool value) { requires_grad_ = value; }

  void fill(float value);
  bool all_finite() const;
  /// Bitwise equality of shape and contents.
  bool identical(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<float> data_;
  bool requires_grad_ = false;
};

/// A named trainable tensor with its accumulated gradient. The gradient is
/// allocated on first use.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool trainable = true);
  void zero_grad();
};

}  // namespace ppa
