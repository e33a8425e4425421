#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace pseudocam {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major array of doubles. A rank-0 tensor (empty shape) holds one
/// value.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }
  static Tensor identity(std::size_t n);
  // 2-D tensor from nested rows; rows must have equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  // Same data viewed under a different shape of equal size.
  Tensor reshaped(Shape shape) const;
  void fill(double value);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

bool all_finite(const Tensor& t) noexcept;
// Throws NumericError naming `where` and the first offending flat index.
void require_finite(const Tensor& t, const std::string& where);

// Standard matrix product; accumulation runs over the inner index in
// ascending order.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& m);

Tensor map_elementwise(const Tensor& t, const std::function<double(double)>& f);

enum class ReduceMode { kMean, kMax };

// Drops the listed axes. Reducing every axis yields a rank-0 tensor.
Tensor reduce(const Tensor& t, std::span<const std::size_t> axes, ReduceMode mode);
Tensor reduce(const Tensor& t, std::initializer_list<std::size_t> axes, ReduceMode mode);

// out = alpha * a + beta * b, shapes must match.
Tensor axpby(double alpha, const Tensor& a, double beta, const Tensor& b);

double relu(double x) noexcept;
double sigmoid(double x) noexcept;

}  // namespace pseudocam
