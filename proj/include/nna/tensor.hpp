#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace nna {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Rank-2 tensors are used as [rows x cols]
/// matrices; batched activations are [batch x features].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  /// Same data viewed under a different shape of equal element count.
  Tensor reshaped(Shape shape) const;
  void fill(double value);
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// a[m x k] * b[k x n]. Each output element accumulates over k in ascending
/// order, so results match a naive triple loop bit for bit.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a[m x k] * b[n x k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// a[k x m]^T * b[k x n], accumulated into out[m x n].
void matmul_tn_accumulate(const Tensor& a, const Tensor& b, Tensor& out);
Tensor transpose(const Tensor& a);

/// Horizontal concatenation of two matrices with equal row count.
Tensor hconcat(const Tensor& left, const Tensor& right);

void add_inplace(Tensor& target, const Tensor& other);
void scale_inplace(Tensor& target, double factor);
Tensor hadamard(const Tensor& a, const Tensor& b);
double sum_of_squares(const Tensor& a);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace nna
