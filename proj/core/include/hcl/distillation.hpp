#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hcl/model_zoo.hpp"
#include "hcl/task_stream.hpp"
#include "hcl/tensor.hpp"

namespace hcl {

enum class KlDirection { student_to_teacher, teacher_to_student };
enum class KdDistance { kl, ce, mse };

KlDirection parse_kl_direction(const std::string& s);
KdDistance parse_kd_distance(const std::string& s);
std::string to_string(KlDirection d);
std::string to_string(KdDistance d);

struct KdConfig {
  double psi = 0.1;
  double tau = 1.0;
  double alpha = 1.0;
  double beta = 1.0;
  KlDirection direction = KlDirection::student_to_teacher;
  KdDistance distance = KdDistance::kl;
  // Multiply the KL term by tau^2 so gradient magnitude does not shrink with
  // temperature.
  bool tau_squared = true;

  // Throws ConfigError naming the offending "kd.*" key.
  void validate() const;
  bool operator==(const KdConfig&) const = default;
};

struct LossGrad {
  double value = 0.0;
  Matrix grad;  // d value / d logits
};

// Row-wise softmax of logits / tau.
Matrix softmax(const Matrix& logits, double tau = 1.0);

// y (1 - psi) + psi / C for each integer label.
Matrix smooth_labels(std::span<const int> labels, double psi, std::size_t num_classes);

// Batch-mean cross-entropy between softmax(logits) and soft targets whose rows
// must sum to one.
double task_loss(const Matrix& logits, const Matrix& soft_targets);
LossGrad task_loss_grad(const Matrix& logits, const Matrix& soft_targets);

struct KdLossOptions {
  double tau = 1.0;
  KlDirection direction = KlDirection::student_to_teacher;
  KdDistance distance = KdDistance::kl;
  bool tau_squared = true;
};

// Distance between tau-softened student and teacher distributions, averaged
// over the batch. KL is scaled by tau^2 when enabled; CE is reported relative
// to the teacher entropy so that identical distributions give zero; MSE is the
// mean squared probability difference.
double kd_loss(const Matrix& student_logits, const Matrix& teacher_logits,
               const KdLossOptions& options);
LossGrad kd_loss_grad(const Matrix& student_logits, const Matrix& teacher_logits,
                      const KdLossOptions& options);

KdLossOptions kd_options(const KdConfig& cfg);

struct ObjectiveBreakdown {
  double task = 0.0;
  std::optional<double> kd;
  std::optional<double> synthetic_kd;
  std::optional<double> buffer;
  double kd_scale = 1.0;
  double total = 0.0;
};

// Inputs to one evaluation of the training objective. `task` is the already
// augmented view, shared by student and teacher. Synthetic inputs are used as
// given; their teacher logits may be supplied to skip a teacher forward.
struct ObjectiveBatches {
  const LabeledBatch* task = nullptr;
  const Tensor* synthetic = nullptr;
  const Matrix* synthetic_teacher_logits = nullptr;
  const LabeledBatch* buffer = nullptr;
  // Restricts the task loss to these classes (task-identity ablation).
  const std::vector<int>* task_classes = nullptr;
  // A different view for the teacher's task-batch logits. Only the
  // inconsistent-views ablation sets this.
  const LabeledBatch* teacher_view = nullptr;
};

// task_loss(smoothed) + alpha * kd(task view) + beta * kd(synthetic) +
// task_loss(buffer). The student runs in its current mode; the teacher must be
// in eval mode and never receives gradients. When `grads` is non-null the
// student's parameter gradients are accumulated into it.
ObjectiveBreakdown total_objective(Model& student, const Model* teacher,
                                   const ObjectiveBatches& batches, const KdConfig& cfg,
                                   Gradients* grads = nullptr);

}  // namespace hcl
