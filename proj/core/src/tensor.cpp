#include "hcl/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "hcl/errors.hpp"

namespace hcl {

std::string Shape::str() const {
  std::ostringstream os;
  os << '[' << n << 'x' << c << 'x' << h << 'x' << w << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape_.size()) {
    throw ShapeError("tensor value count " + std::to_string(data_.size()) +
                     " does not match shape " + shape_.str());
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.size() != size()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  Tensor out = *this;
  out.shape_ = shape;
  return out;
}

Tensor Tensor::gather(std::span<const std::size_t> rows) const {
  Shape s = shape_;
  s.n = rows.size();
  Tensor out(s);
  const std::size_t per = shape_.per_sample();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= shape_.n) throw ShapeError("gather index out of range");
    std::copy_n(sample(rows[i]), per, out.sample(i));
  }
  return out;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw ShapeError("tensor add: " + shape_.str() + " vs " + other.shape_.str());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

Matrix to_matrix(const Tensor& t) {
  const auto& s = t.shape();
  Matrix m(static_cast<Eigen::Index>(s.n), static_cast<Eigen::Index>(s.per_sample()));
  std::copy_n(t.data(), t.size(), m.data());
  return m;
}

Tensor from_matrix(const Matrix& m) {
  Tensor t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()), 1, 1});
  std::copy_n(m.data(), t.size(), t.data());
  return t;
}

}  // namespace hcl
