#include "hcl/metrics.hpp"

#include <algorithm>

#include "hcl/errors.hpp"

namespace hcl {

EvalMode parse_eval_mode(const std::string& s) {
  if (s == "task_il") return EvalMode::task_il;
  if (s == "class_il") return EvalMode::class_il;
  throw ConfigError("eval.modes: unknown mode '" + s + "'");
}

std::string to_string(EvalMode m) { return m == EvalMode::task_il ? "task_il" : "class_il"; }

AccuracyMatrix::AccuracyMatrix(std::size_t num_tasks, EvalMode mode)
    : num_tasks_(num_tasks), mode_(mode) {
  if (num_tasks == 0) throw ContractViolation("accuracy matrix needs at least one task");
}

void AccuracyMatrix::set_row(std::size_t i, const std::vector<double>& row) {
  if (i != rows_.size() + 1 || i > num_tasks_) {
    throw ContractViolation("accuracy row " + std::to_string(i) + " written out of order");
  }
  if (row.size() != i) throw ContractViolation("accuracy row " + std::to_string(i) + " has wrong length");
  for (double v : row) {
    if (!(v >= 0.0 && v <= 100.0)) throw ContractViolation("accuracy outside [0, 100]");
  }
  rows_.push_back(row);
}

double AccuracyMatrix::at(std::size_t i, std::size_t j) const {
  if (i < 1 || i > rows_.size() || j < 1 || j > i) {
    throw ContractViolation("accuracy entry (" + std::to_string(i) + ", " + std::to_string(j) +
                            ") is undefined");
  }
  return rows_[i - 1][j - 1];
}

const std::vector<double>& AccuracyMatrix::row(std::size_t i) const {
  if (i < 1 || i > rows_.size()) throw ContractViolation("accuracy row not written");
  return rows_[i - 1];
}

double average_accuracy(const AccuracyMatrix& m) {
  if (!m.complete()) throw ContractViolation("average accuracy needs a complete matrix");
  const auto& last = m.row(m.num_tasks());
  double sum = 0.0;
  for (double v : last) sum += v;
  return sum / static_cast<double>(last.size());
}

double average_forgetting(const AccuracyMatrix& m) {
  const std::size_t T = m.num_tasks();
  if (T < 2) throw UndefinedMetric("forgetting is undefined for a single task");
  if (!m.complete()) throw ContractViolation("average forgetting needs a complete matrix");
  double sum = 0.0;
  for (std::size_t t = 1; t < T; ++t) {
    double best = m.at(t, t);
    for (std::size_t i = t + 1; i <= T; ++i) best = std::max(best, m.at(i, t));
    sum += best - m.at(T, t);
  }
  return sum / static_cast<double>(T - 1);
}

std::vector<int> predict(const Matrix& logits, const std::vector<int>* allowed) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    int best = -1;
    double best_v = 0.0;
    if (allowed == nullptr) {
      for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        if (best < 0 || logits(r, c) > best_v) {
          best = static_cast<int>(c);
          best_v = logits(r, c);
        }
      }
    } else {
      for (int c : *allowed) {
        if (best < 0 || logits(r, c) > best_v) {
          best = c;
          best_v = logits(r, c);
        }
      }
    }
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

std::vector<double> evaluate(const Model& model, const Dataset& data, const TaskStream& stream,
                             int upto_t, EvalMode mode, Split split) {
  constexpr std::size_t kChunk = 256;
  std::vector<double> row;
  for (int t = 1; t <= upto_t; ++t) {
    const TaskSpec& task = stream.task(t);
    const auto& indices = split == Split::test  ? task.test_indices
                          : split == Split::val ? task.val_indices
                                                : task.train_indices;
    if (indices.empty()) throw EmptySourceError("task " + std::to_string(t) + " has no samples to evaluate");
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < indices.size(); begin += kChunk) {
      const std::size_t end = std::min(indices.size(), begin + kChunk);
      const LabeledBatch b = gather_batch(
          data, stream, split, std::span<const std::size_t>(indices.data() + begin, end - begin));
      const Matrix logits = to_matrix(model.infer(b.inputs));
      const auto pred = predict(logits, mode == EvalMode::task_il ? &task.class_ids : nullptr);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.labels[i] ? 1 : 0;
    }
    row.push_back(100.0 * static_cast<double>(correct) / static_cast<double>(indices.size()));
  }
  return row;
}

}  // namespace hcl
