#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hcl/model_zoo.hpp"

namespace hcl {

// Plain SGD with optional heavy-ball momentum and L2 weight decay.
class Sgd {
 public:
  Sgd(double lr, double momentum = 0.0, double weight_decay = 0.0)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  // `skip_before` leaves the first parameter tensors untouched (head warmup).
  void step(std::vector<Tensor*> params, const Gradients& grads, std::size_t skip_before = 0);

 private:
  double lr_;
  double momentum_;
  double weight_decay_;
  std::vector<Tensor> velocity_;
};

// Adam over a single flat array of values.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<double> values, std::span<const double> grads);

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

}  // namespace hcl
