#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace udagcn {

/// Raised when tensor extents do not fit an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a caller breaks an operation's precondition (empty batch,
/// non-scalar loss, mismatched batch sizes).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised for out-of-range class labels.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Raised for invalid configuration values; the message names the key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles. Extents are always positive and
/// values().size() == product(shape()).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }
  static Tensor from(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  /// 2-D accessor (row, col) for rank-2 tensors.
  double& at(std::size_t r, std::size_t c) noexcept { return values_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const noexcept { return values_[r * shape_[1] + c]; }

  /// The single value of a one-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  /// Rows [begin, end) along axis 0.
  Tensor slice(std::size_t begin, std::size_t end) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  Shape shape_;
  std::vector<double> values_;
};

/// Concatenates tensors along axis 0; trailing extents must agree.
Tensor stack_rows(std::span<const Tensor> parts);

}  // namespace udagcn
