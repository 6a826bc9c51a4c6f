// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dropping {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Vectors are stored as 1 x n rows.
class Tensor {
 public:
  Tensor() : shape_{1, 1}, data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
  static Tensor row(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);
  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }
  /// Xavier/Glorot uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
  static Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  /// Leading dimension for a 2-d tensor; 1 for a 1-d tensor.
  std::size_t rows() const { return shape_.size() == 1 ? 1 : shape_[0]; }
  std::size_t cols() const { return shape_.back(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  void fill(double v);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor matmul(const Tensor& a, const Tensor& b);

/// Numerically stabilised softmax. axis 1 normalises each row, axis 0 each column.
Tensor softmax(const Tensor& x, int axis = 1);

/// Inverted dropout: survivors scaled by 1/(1-p). Identity when not training.
Tensor dropout_apply(const Tensor& x, double rate, std::mt19937_64& rng, bool training);

/// Bernoulli keep-mask already scaled by 1/(1-p).
Tensor dropout_mask(const Shape& shape, double rate, std::mt19937_64& rng);

void check_finite(const Tensor& t, const char* what);

}  // namespace dropping
