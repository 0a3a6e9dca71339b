#include "hcl/distillation.hpp"

#include <cmath>

#include "hcl/errors.hpp"

namespace hcl {

KlDirection parse_kl_direction(const std::string& s) {
  if (s == "student_to_teacher") return KlDirection::student_to_teacher;
  if (s == "teacher_to_student") return KlDirection::teacher_to_student;
  throw ConfigError("kd.direction: unknown value '" + s + "'");
}

KdDistance parse_kd_distance(const std::string& s) {
  if (s == "kl") return KdDistance::kl;
  if (s == "ce") return KdDistance::ce;
  if (s == "mse") return KdDistance::mse;
  throw ConfigError("kd.distance: unknown value '" + s + "'");
}

std::string to_string(KlDirection d) {
  return d == KlDirection::student_to_teacher ? "student_to_teacher" : "teacher_to_student";
}

std::string to_string(KdDistance d) {
  switch (d) {
    case KdDistance::kl: return "kl";
    case KdDistance::ce: return "ce";
    case KdDistance::mse: return "mse";
  }
  return "kl";
}

void KdConfig::validate() const {
  if (!(psi >= 0.0 && psi < 1.0)) throw ConfigError("kd.psi must lie in [0, 1)");
  if (!(tau > 0.0)) throw ConfigError("kd.tau must be positive");
  if (!(alpha >= 0.0)) throw ConfigError("kd.alpha must be non-negative");
  if (!(beta >= 0.0)) throw ConfigError("kd.beta must be non-negative");
}

Matrix softmax(const Matrix& logits, double tau) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    double z = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      p(r, c) = std::exp((logits(r, c) - mx) / tau);
      z += p(r, c);
    }
    p.row(r) /= z;
  }
  return p;
}

namespace {

// log softmax(logits / tau), computed stably.
Matrix log_softmax(const Matrix& logits, double tau) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    double z = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) z += std::exp((logits(r, c) - mx) / tau);
    const double lz = std::log(z);
    for (Eigen::Index c = 0; c < logits.cols(); ++c) out(r, c) = (logits(r, c) - mx) / tau - lz;
  }
  return out;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

}  // namespace

Matrix smooth_labels(std::span<const int> labels, double psi, std::size_t num_classes) {
  if (!(psi >= 0.0 && psi < 1.0)) throw ConfigError("kd.psi must lie in [0, 1)");
  const double off = psi / static_cast<double>(num_classes);
  Matrix y = Matrix::Constant(static_cast<Eigen::Index>(labels.size()),
                              static_cast<Eigen::Index>(num_classes), off);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw ContractViolation("label " + std::to_string(labels[i]) + " outside 0.." +
                              std::to_string(num_classes - 1));
    }
    y(static_cast<Eigen::Index>(i), labels[i]) = (1.0 - psi) + off;
  }
  return y;
}

LossGrad task_loss_grad(const Matrix& logits, const Matrix& soft_targets) {
  require_same_shape(logits, soft_targets, "task_loss");
  for (Eigen::Index r = 0; r < soft_targets.rows(); ++r) {
    if (std::abs(soft_targets.row(r).sum() - 1.0) > 1e-6 || soft_targets.row(r).minCoeff() < 0.0) {
      throw ContractViolation("task_loss: target row " + std::to_string(r) +
                              " is not a probability distribution");
    }
  }
  const double n = static_cast<double>(logits.rows());
  const Matrix logp = log_softmax(logits, 1.0);
  LossGrad out;
  out.value = -(soft_targets.array() * logp.array()).sum() / n;
  out.grad = (logp.array().exp() - soft_targets.array()).matrix() / n;
  return out;
}

double task_loss(const Matrix& logits, const Matrix& soft_targets) {
  return task_loss_grad(logits, soft_targets).value;
}

LossGrad kd_loss_grad(const Matrix& student_logits, const Matrix& teacher_logits,
                      const KdLossOptions& o) {
  require_same_shape(student_logits, teacher_logits, "kd_loss");
  if (!(o.tau > 0.0)) throw ConfigError("kd.tau must be positive");
  const double n = static_cast<double>(student_logits.rows());
  const double tau = o.tau;
  const Matrix logp = log_softmax(student_logits, tau);
  const Matrix logq = log_softmax(teacher_logits, tau);
  const Matrix p = logp.array().exp().matrix();
  const Matrix q = logq.array().exp().matrix();

  LossGrad out;
  switch (o.distance) {
    case KdDistance::kl: {
      const double scale = o.tau_squared ? tau * tau : 1.0;
      if (o.direction == KlDirection::student_to_teacher) {
        // KL(p || q); d/ds = p (a - <p, a>) / tau with a = log p - log q.
        const Matrix a = logp - logq;
        out.value = scale * (p.array() * a.array()).sum() / n;
        out.grad.resize(p.rows(), p.cols());
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
          const double mean_a = p.row(r).dot(a.row(r));
          out.grad.row(r) = (p.row(r).array() * (a.row(r).array() - mean_a)).matrix();
        }
        out.grad *= scale / (tau * n);
      } else {
        // KL(q || p); d/ds = (p - q) / tau.
        out.value = scale * (q.array() * (logq - logp).array()).sum() / n;
        out.grad = (p - q) * (scale / (tau * n));
      }
      break;
    }
    case KdDistance::ce: {
      // H(q, p) - H(q): same gradient as cross-entropy, zero at p == q.
      out.value = (q.array() * (logq - logp).array()).sum() / n;
      out.grad = (p - q) / (tau * n);
      break;
    }
    case KdDistance::mse: {
      const double k = static_cast<double>(p.cols());
      out.value = (p - q).squaredNorm() / (n * k);
      const Matrix gp = (p - q) * (2.0 / (n * k));
      out.grad.resize(p.rows(), p.cols());
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const double inner = gp.row(r).dot(p.row(r));
        out.grad.row(r) = (p.row(r).array() * (gp.row(r).array() - inner)).matrix() / tau;
      }
      break;
    }
  }
  return out;
}

double kd_loss(const Matrix& student_logits, const Matrix& teacher_logits, const KdLossOptions& o) {
  return kd_loss_grad(student_logits, teacher_logits, o).value;
}

KdLossOptions kd_options(const KdConfig& cfg) {
  return KdLossOptions{cfg.tau, cfg.direction, cfg.distance, cfg.tau_squared};
}

namespace {

// Task loss, optionally restricted to a class subset (other logits receive no
// gradient and smoothing spreads over the subset only).
LossGrad smoothed_task_loss(const Matrix& logits, const std::vector<int>& labels, double psi,
                            const std::vector<int>* classes) {
  if (classes == nullptr) {
    return task_loss_grad(logits, smooth_labels(labels, psi, static_cast<std::size_t>(logits.cols())));
  }
  Matrix sub(logits.rows(), static_cast<Eigen::Index>(classes->size()));
  std::vector<int> local(labels.size(), -1);
  for (std::size_t j = 0; j < classes->size(); ++j) {
    sub.col(static_cast<Eigen::Index>(j)) = logits.col((*classes)[j]);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == (*classes)[j]) local[i] = static_cast<int>(j);
    }
  }
  LossGrad lg = task_loss_grad(sub, smooth_labels(local, psi, classes->size()));
  Matrix full = Matrix::Zero(logits.rows(), logits.cols());
  for (std::size_t j = 0; j < classes->size(); ++j) {
    full.col((*classes)[j]) = lg.grad.col(static_cast<Eigen::Index>(j));
  }
  lg.grad = std::move(full);
  return lg;
}

void accumulate(Model& student, const ForwardTrace& trace, const Matrix& grad_logits,
                Gradients* grads) {
  if (grads == nullptr) return;
  student.backward(trace, from_matrix(grad_logits), grads);
}

}  // namespace

ObjectiveBreakdown total_objective(Model& student, const Model* teacher,
                                   const ObjectiveBatches& batches, const KdConfig& cfg,
                                   Gradients* grads) {
  if (batches.task == nullptr) throw ContractViolation("total_objective needs a task batch");
  if (teacher != nullptr && teacher->mode() != Mode::eval) {
    throw ContractViolation("teacher must be frozen in eval mode");
  }
  const KdLossOptions kd = kd_options(cfg);
  ObjectiveBreakdown out;
  out.kd_scale = (cfg.distance == KdDistance::kl && cfg.tau_squared) ? cfg.tau * cfg.tau : 1.0;

  {
    ForwardTrace trace;
    const Matrix logits = to_matrix(student.forward(batches.task->inputs, &trace));
    LossGrad task = smoothed_task_loss(logits, batches.task->labels, cfg.psi, batches.task_classes);
    out.task = task.value;
    Matrix g = std::move(task.grad);
    if (teacher != nullptr && cfg.alpha > 0.0) {
      const LabeledBatch& tv = batches.teacher_view != nullptr ? *batches.teacher_view : *batches.task;
      if (tv.inputs.shape() != batches.task->inputs.shape()) {
        throw ShapeError("teacher view shape differs from the task batch");
      }
      const Matrix t_logits = to_matrix(teacher->infer(tv.inputs));
      const LossGrad d = kd_loss_grad(logits, t_logits, kd);
      out.kd = d.value;
      g += cfg.alpha * d.grad;
    }
    accumulate(student, trace, g, grads);
  }

  if (batches.synthetic != nullptr && teacher != nullptr && cfg.beta > 0.0) {
    ForwardTrace trace;
    const Matrix logits = to_matrix(student.forward(*batches.synthetic, &trace));
    const Matrix t_logits = batches.synthetic_teacher_logits != nullptr
                                ? *batches.synthetic_teacher_logits
                                : to_matrix(teacher->infer(*batches.synthetic));
    const LossGrad d = kd_loss_grad(logits, t_logits, kd);
    out.synthetic_kd = d.value;
    accumulate(student, trace, cfg.beta * d.grad, grads);
  }

  if (batches.buffer != nullptr && batches.buffer->size() > 0) {
    ForwardTrace trace;
    const Matrix logits = to_matrix(student.forward(batches.buffer->inputs, &trace));
    const LossGrad b = smoothed_task_loss(logits, batches.buffer->labels, cfg.psi, nullptr);
    out.buffer = b.value;
    accumulate(student, trace, b.grad, grads);
  }

  out.total = out.task + cfg.alpha * out.kd.value_or(0.0) +
              cfg.beta * out.synthetic_kd.value_or(0.0) + out.buffer.value_or(0.0);
  return out;
}

}  // namespace hcl
