#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "hcl/config.hpp"
#include "hcl/dataset.hpp"
#include "hcl/tensor.hpp"

namespace hcl::testing {

inline Tensor random_tensor(Shape s, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Tensor t(s);
  for (auto& v : t.values()) v = normal(rng);
  return t;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-5});
  return std::abs(analytic - numeric) / scale;
}

// Largest relative error between `analytic` and central differences of `f`
// over the listed coordinates of `x`.
inline double max_fd_error(std::vector<double>& x, const std::vector<double>& analytic,
                           const std::function<double()>& f, const std::vector<std::size_t>& coords,
                           double eps = 1e-3) {
  double worst = 0.0;
  for (std::size_t i : coords) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = f();
    x[i] = keep - eps;
    const double down = f();
    x[i] = keep;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

// Step for probes through ReLU networks: with 16x16 inputs some
// pre-activations sit within 1e-3 of zero, and a wider step straddles the kink.
inline constexpr double kKinkSafeStep = 1e-6;

inline std::vector<std::size_t> sample_coords(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  if (count >= n) return all;
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(count);
  return all;
}

// A small blobs dataset shared by the integration-style tests.
inline const Dataset& tiny_blobs() {
  static const Dataset data = make_blobs(40, 20);
  return data;
}

// A 2-task, few-epoch experiment that runs in a couple of seconds.
inline ExperimentConfig tiny_config(Method method) {
  ExperimentConfig cfg;
  cfg.method = method;
  cfg.name = to_string(method);
  cfg.stream.num_tasks = 2;
  cfg.stream.classes_per_task = 2;
  cfg.stream.train_per_class = 40;
  cfg.stream.test_per_class = 20;
  cfg.schedule = {"small_cnn", "wide_cnn"};
  cfg.train.epochs = 2;
  cfg.train.batch_size = 16;
  cfg.inversion.k = 5;
  cfg.replay.capacity = 20;
  cfg.replay.batch_size = 8;
  cfg.seeds = {0};
  return cfg;
}

}  // namespace hcl::testing
