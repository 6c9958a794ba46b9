#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace airsum::num {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major float64 tensor. Public operations treat tensors as
// immutable values; mutable_data() exists for kernels that fill a freshly
// allocated result before handing it out.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const;
  bool empty() const { return data_.empty(); }
  bool is_scalar() const { return data_.size() == 1; }

  std::span<const double> data() const { return {data_.data(), data_.size()}; }
  std::span<double> mutable_data() { return {data_.data(), data_.size()}; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // Rank-2 / rank-3 element access, row-major.
  double at(std::size_t i, std::size_t j) const;
  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j, std::size_t k) const;
  double& at(std::size_t i, std::size_t j, std::size_t k);

  // Value of a single-element tensor; throws ShapeError otherwise.
  double item() const;

  // Throws NumericError naming `context` if any entry is NaN/Inf.
  void ensure_finite(const char* context) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  Tensor(Shape shape, std::vector<double> data);

  Shape shape_;
  std::vector<double> data_;
};

// Small helpers used across modules; all use fixed left-to-right
// accumulation so results are reproducible.
double dot(const Tensor& a, const Tensor& b);
double norm1(const Tensor& a);
double norm2(const Tensor& a);
double sum_of(const Tensor& a);
double mean_of(const Tensor& a);

}  // namespace airsum::num
