#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "hcl/errors.hpp"
#include "hcl/metrics.hpp"
#include "testing.hpp"

namespace hcl {
namespace {

AccuracyMatrix from_rows(const std::vector<std::vector<double>>& rows) {
  AccuracyMatrix m(rows.size(), EvalMode::task_il);
  for (std::size_t i = 0; i < rows.size(); ++i) m.set_row(i + 1, rows[i]);
  return m;
}

TEST(AverageAccuracy, Examples) {
  EXPECT_EQ(average_accuracy(from_rows({{90}})), 90.0);
  EXPECT_EQ(average_accuracy(from_rows({{70}, {80, 85}})), 82.5);
  EXPECT_EQ(average_accuracy(from_rows({{10}, {30, 20}, {42, 42, 42}})), 42.0);
}

TEST(AverageAccuracy, IncompleteMatrixIsRejected) {
  AccuracyMatrix m(3, EvalMode::task_il);
  m.set_row(1, {50});
  EXPECT_THROW(average_accuracy(m), ContractViolation);
}

TEST(AverageForgetting, Examples) {
  EXPECT_EQ(average_forgetting(from_rows({{90}, {80, 85}})), 10.0);
  EXPECT_EQ(average_forgetting(from_rows({{50}, {60, 70}, {60, 75, 80}})), 0.0);
  // Task 1 peaks after task 2; task 2 drops 10.
  EXPECT_EQ(average_forgetting(from_rows({{50}, {70, 90}, {40, 80, 99}})), 20.0);
  EXPECT_THROW(average_forgetting(from_rows({{90}})), UndefinedMetric);
}

TEST(AccuracyMatrix, EnforcesShapeOrderAndRange) {
  AccuracyMatrix m(2, EvalMode::class_il);
  EXPECT_THROW(m.set_row(2, {1, 2}), ContractViolation);
  EXPECT_THROW(m.set_row(1, {1, 2}), ContractViolation);
  EXPECT_THROW(m.set_row(1, {101}), ContractViolation);
  EXPECT_THROW(m.set_row(1, {-1}), ContractViolation);
  m.set_row(1, {100});
  EXPECT_THROW(m.set_row(1, {100}), ContractViolation);
  m.set_row(2, {0, 50});
  EXPECT_TRUE(m.complete());
  EXPECT_EQ(m.at(2, 2), 50.0);
  EXPECT_THROW(m.at(1, 2), ContractViolation);
  EXPECT_THROW(AccuracyMatrix(0, EvalMode::task_il), ContractViolation);
}

// Brute force over a dense T x T table filled only below the diagonal.
struct Oracle {
  std::vector<std::vector<double>> a;
  double accuracy() const {
    const std::size_t T = a.size();
    double s = 0;
    for (std::size_t t = 0; t < T; ++t) s += a[T - 1][t];
    return s / static_cast<double>(T);
  }
  double forgetting() const {
    const std::size_t T = a.size();
    double s = 0;
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> drops;
      for (std::size_t i = t; i < T; ++i) drops.push_back(a[i][t] - a[T - 1][t]);
      s += *std::max_element(drops.begin(), drops.end());
    }
    return s / static_cast<double>(T - 1);
  }
};

TEST(Metrics, MatchBruteForceOracleOnRandomMatrices) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(2, 12);
  // Multiples of 1/8 keep every partial sum exact so equality is exact.
  std::uniform_int_distribution<int> eighths(0, 800);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = static_cast<std::size_t>(size(rng));
    Oracle o;
    AccuracyMatrix m(T, EvalMode::task_il);
    for (std::size_t i = 1; i <= T; ++i) {
      std::vector<double> row;
      for (std::size_t j = 1; j <= i; ++j) row.push_back(eighths(rng) / 8.0);
      m.set_row(i, row);
      o.a.push_back(row);
    }
    EXPECT_EQ(average_accuracy(m), o.accuracy());
    EXPECT_EQ(average_forgetting(m), o.forgetting());
    EXPECT_GE(average_forgetting(m), 0.0);
  }
}

TEST(Predict, FirstMaximumWinsAndMaskRestricts) {
  Matrix logits(3, 4);
  logits << 1, 3, 3, 0,  //
      5, 5, 5, 5,        //
      -1, 0, 2, 9;
  EXPECT_EQ(predict(logits), (std::vector<int>{1, 0, 3}));
  const std::vector<int> allowed{2, 0};
  EXPECT_EQ(predict(logits, &allowed), (std::vector<int>{2, 2, 2}));
}

std::unique_ptr<Model> constant_model(std::size_t classes) {
  auto model = instantiate(make_spec("small_cnn", {3, 16, 16}), classes, 0);
  auto params = model->parameters();
  for (std::size_t i = model->head_parameter_index(); i < params.size(); ++i) params[i]->fill(0.0);
  model->set_mode(Mode::eval);
  return model;
}

TEST(Evaluate, ConstantClassifierScoresOneOverClasses) {
  const Dataset& data = testing::tiny_blobs();
  const TaskStream s = build_split_stream(data, 3, 2, 0);
  auto model = constant_model(6);
  // All logits tie, so task-IL always answers the first class of each task
  // and class-IL always answers global class 0.
  EXPECT_EQ(evaluate(*model, data, s, 3, EvalMode::task_il), (std::vector<double>{50, 50, 50}));
  EXPECT_EQ(evaluate(*model, data, s, 3, EvalMode::class_il), (std::vector<double>{50, 0, 0}));
}

TEST(Evaluate, TaskIncrementalDominatesClassIncremental) {
  const Dataset& data = testing::tiny_blobs();
  const TaskStream s = build_split_stream(data, 5, 2, 1);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto model = instantiate(make_spec("wide_cnn", {3, 16, 16}), 10, seed);
    model->set_mode(Mode::eval);
    const auto task = evaluate(*model, data, s, 5, EvalMode::task_il);
    const auto cls = evaluate(*model, data, s, 5, EvalMode::class_il);
    for (std::size_t t = 0; t < 5; ++t) EXPECT_GE(task[t], cls[t]);
  }
}

TEST(Evaluate, ModeNamesRoundTrip) {
  for (auto m : {EvalMode::task_il, EvalMode::class_il}) EXPECT_EQ(parse_eval_mode(to_string(m)), m);
  EXPECT_THROW(parse_eval_mode("domain_il"), ConfigError);
}

}  // namespace
}  // namespace hcl
