#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace stnas {

#ifdef STNAS_REAL_FLOAT
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<Real> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor filled(Shape shape, Real value);
  static Tensor scalar(Real value) { return Tensor({1}, {value}); }
  // 2-D literal, e.g. Tensor::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<Real>> rows);
  static Tensor vector(std::initializer_list<Real> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<const Real> values() const noexcept { return values_; }
  std::span<Real> values() noexcept { return values_; }
  const Real* data() const noexcept { return values_.data(); }
  Real* data() noexcept { return values_.data(); }

  Real& operator[](std::size_t i) { return values_[i]; }
  Real operator[](std::size_t i) const { return values_[i]; }
  Real& at(std::size_t i, std::size_t j) { return values_[i * shape_.back() + j]; }
  Real at(std::size_t i, std::size_t j) const { return values_[i * shape_.back() + j]; }

  // Same elements under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<Real> values_;
};

// Product of all axes except the last.
inline std::size_t leading_rows(const Shape& shape) {
  std::size_t rows = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
  return rows;
}

Real max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace stnas
