#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace hcl {

// NCHW extents. Vectors and logit matrices use h = w = 1.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t size() const { return n * c * h * w; }
  std::size_t per_sample() const { return c * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Row-major matrix used for logits, probabilities and soft targets (N x K).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense 4-d array of doubles in NCHW order with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  // Pointer to the first value of sample n.
  double* sample(std::size_t n) { return data_.data() + n * shape_.per_sample(); }
  const double* sample(std::size_t n) const { return data_.data() + n * shape_.per_sample(); }

  // Same values, new extents; total size must agree.
  Tensor reshaped(Shape shape) const;

  // Copies the listed samples (in order) into a new tensor.
  Tensor gather(std::span<const std::size_t> rows) const;

  void fill(double v);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Views a tensor as an N x (C*H*W) matrix and back.
Matrix to_matrix(const Tensor& t);
Tensor from_matrix(const Matrix& m);

}  // namespace hcl
