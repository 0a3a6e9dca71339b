#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hcl/dataset.hpp"
#include "hcl/model_zoo.hpp"
#include "hcl/task_stream.hpp"

namespace hcl {

enum class EvalMode { task_il, class_il };

EvalMode parse_eval_mode(const std::string& s);
std::string to_string(EvalMode m);

// Lower-triangular a(i, j): percent accuracy on task j after finishing task i
// (both 1-based, j <= i).
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  AccuracyMatrix(std::size_t num_tasks, EvalMode mode);

  std::size_t num_tasks() const { return num_tasks_; }
  EvalMode mode() const { return mode_; }

  // Writes row i. Rows are written once, in order; the row must hold i values
  // in [0, 100]. Violations throw ContractViolation.
  void set_row(std::size_t i, const std::vector<double>& row);
  std::size_t rows_written() const { return rows_.size(); }
  bool complete() const { return rows_.size() == num_tasks_; }

  double at(std::size_t i, std::size_t j) const;
  const std::vector<double>& row(std::size_t i) const;

  bool operator==(const AccuracyMatrix&) const = default;

 private:
  std::size_t num_tasks_ = 0;
  EvalMode mode_ = EvalMode::task_il;
  std::vector<std::vector<double>> rows_;
};

// Mean of the final row. Incomplete matrix -> ContractViolation.
double average_accuracy(const AccuracyMatrix& m);

// Mean over tasks 1..T-1 of max_{i >= t} a(i, t) - a(T, t). T = 1 throws
// UndefinedMetric.
double average_forgetting(const AccuracyMatrix& m);

// Predicted global class per row of `logits`; with `allowed` only those
// columns compete.
std::vector<int> predict(const Matrix& logits, const std::vector<int>* allowed = nullptr);

// Percent accuracy of `model` (eval mode) on each task 1..upto_t of a split.
// task_il masks logits to the task's classes; class_il uses all outputs.
std::vector<double> evaluate(const Model& model, const Dataset& data, const TaskStream& stream,
                             int upto_t, EvalMode mode, Split split = Split::test);

}  // namespace hcl
