#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hcl/dataset.hpp"
#include "hcl/model_zoo.hpp"
#include "hcl/task_stream.hpp"
#include "hcl/tensor.hpp"

namespace hcl {

enum class InitMode { gaussian, current_batch };

// `running` prefers the teacher's normalization running statistics and falls
// back to current-batch estimates for teachers that keep none.
enum class StatsSource { running, approximate };

InitMode parse_init_mode(const std::string& s);
StatsSource parse_stats_source(const std::string& s);
std::string to_string(InitMode m);
std::string to_string(StatsSource s);

struct InversionConfig {
  std::size_t k = 500;
  double lr = 0.005;
  double alpha_tv = 0.001;
  double alpha_l2 = 0.0;
  double alpha_feature = 0.1;
  InitMode init_mode = InitMode::current_batch;
  StatsSource stats_source = StatsSource::running;
  // Synthetic batches generated per task.
  std::size_t num_batches = 1;

  // Throws ConfigError naming the offending "inversion.*" key.
  void validate() const;
  std::uint64_t hash() const;
  bool operator==(const InversionConfig&) const = default;
};

struct SyntheticBatch {
  Tensor inputs;
  std::vector<int> targets;
  std::size_t steps_used = 0;
  std::vector<double> loss_trace;
  // Frozen-teacher logits on the final inputs.
  Matrix teacher_logits;
};

// Mean squared horizontal neighbor difference plus mean squared vertical
// neighbor difference.
double tv_loss(const Tensor& images);
Tensor tv_loss_grad(const Tensor& images);

// Mean squared pixel value.
double l2_loss(const Tensor& images);
Tensor l2_loss_grad(const Tensor& images);

// Sum over layers of MSE(batch mean, target mean) + MSE(batch variance,
// target variance) at the teacher's convolution outputs.
double feature_stat_loss(const Model& teacher, const Tensor& images, const FeatureStats& target);

struct InversionLoss {
  double total = 0.0;
  double classification = 0.0;
  double tv = 0.0;
  double l2 = 0.0;
  double feature = 0.0;
  Tensor input_grad;
};

// Cross-entropy of the teacher to `targets` plus weighted image priors and,
// when `target_stats` is given, the weighted feature-statistic loss; with the
// gradient w.r.t. the images.
InversionLoss inversion_objective(const Model& teacher, const Tensor& images,
                                  std::span<const int> targets, const FeatureStats* target_stats,
                                  const InversionConfig& cfg);

// Labels from tasks 1..t-1, split evenly across those tasks (counts differ by
// at most one; the remainder goes to randomly chosen tasks) and uniformly over
// classes within a task.
std::vector<int> sample_prior_targets(const TaskStream& stream, int t, std::size_t batch_size,
                                      std::uint64_t seed);

// Per-channel clamp range in normalized input space.
struct PixelRange {
  std::vector<double> lower;
  std::vector<double> upper;
  static PixelRange from(const DatasetDescriptor& d);
};

struct SynthesisRequest {
  const Tensor* current_batch = nullptr;  // required for init_mode=current_batch
  std::size_t batch_size = 32;            // used for gaussian init
  const PixelRange* clamp = nullptr;
};

// Optimizes inputs for k Adam steps against the frozen teacher. The teacher is
// only read.
SyntheticBatch synthesize(const Model& teacher, const SynthesisRequest& request,
                          const TaskStream& stream, int t, const InversionConfig& cfg,
                          std::uint64_t seed);

std::string synthesis_cache_key(int t, std::uint64_t seed, const InversionConfig& cfg,
                                std::size_t index);
void save_synthetic(const SyntheticBatch& batch, const std::filesystem::path& path);
SyntheticBatch load_synthetic(const std::filesystem::path& path);

// Binary PPM grid of de-normalized images.
void write_image_grid(const Tensor& images, const DatasetDescriptor& descriptor,
                      const std::filesystem::path& path);

}  // namespace hcl
