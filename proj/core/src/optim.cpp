#include "hcl/optim.hpp"

#include <cmath>

#include "hcl/errors.hpp"

namespace hcl {

void Sgd::step(std::vector<Tensor*> params, const Gradients& grads, std::size_t skip_before) {
  if (params.size() != grads.values.size()) throw ShapeError("sgd: gradient/parameter mismatch");
  if (momentum_ > 0.0 && velocity_.empty()) {
    for (const Tensor* p : params) velocity_.emplace_back(p->shape());
  }
  for (std::size_t i = skip_before; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads.values[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      double d = g[j] + weight_decay_ * p[j];
      if (momentum_ > 0.0) {
        velocity_[i][j] = momentum_ * velocity_[i][j] + d;
        d = velocity_[i][j];
      }
      p[j] -= lr_ * d;
    }
  }
}

void Adam::step(std::span<double> values, std::span<const double> grads) {
  if (values.size() != grads.size()) throw ShapeError("adam: gradient/value mismatch");
  if (m_.empty()) {
    m_.assign(values.size(), 0.0);
    v_.assign(values.size(), 0.0);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < values.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
    values[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

}  // namespace hcl
