#include "udagcn/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace udagcn {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  values_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_extents(shape_);
  if (values_.size() != shape_size(shape_))
    throw DimensionError("tensor of shape " + shape_str(shape_) + " needs " +
                         std::to_string(shape_size(shape_)) + " values, got " +
                         std::to_string(values_.size()));
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(v));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  return shape_[axis];
}

double Tensor::item() const {
  if (values_.size() != 1)
    throw ContractError("item() on tensor of shape " + shape_str(shape_));
  return values_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size())
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), values_);
}

Tensor Tensor::slice(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > dim(0))
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + shape_str(shape_));
  const std::size_t stride = values_.size() / shape_[0];
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s), std::vector<double>(values_.begin() + begin * stride,
                                                  values_.begin() + end * stride));
}

bool Tensor::all_finite() const noexcept {
  for (double v : values_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor stack_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("stack_rows of nothing");
  Shape s = parts[0].shape();
  std::size_t rows = 0;
  std::vector<double> v;
  for (const auto& p : parts) {
    if (p.rank() != s.size() || !std::equal(s.begin() + 1, s.end(), p.shape().begin() + 1))
      throw DimensionError("stack_rows: trailing extents differ: " + shape_str(s) + " vs " +
                           shape_str(p.shape()));
    rows += p.dim(0);
    v.insert(v.end(), p.values().begin(), p.values().end());
  }
  s[0] = rows;
  return Tensor(std::move(s), std::move(v));
}

}  // namespace udagcn
