#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hcl/dataset.hpp"
#include "hcl/tensor.hpp"

namespace hcl {

// One task D_t. Class ids are global stream classes (0 .. C_total-1); the
// index vectors address samples of the underlying dataset.
struct TaskSpec {
  int task_index = 0;
  std::vector<int> class_ids;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
  std::vector<std::size_t> test_indices;
};

struct TaskStream {
  std::vector<TaskSpec> tasks;
  std::size_t total_classes = 0;
  std::string dataset_id;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  // Dataset label of each global class.
  std::vector<int> source_classes;

  std::size_t num_tasks() const { return tasks.size(); }
  // 1-based lookup; throws ContractViolation when out of range.
  const TaskSpec& task(int t) const;
  // Classes of tasks 1..t-1.
  std::vector<int> prior_classes(int t) const;
};

struct LabeledBatch {
  Tensor inputs;
  std::vector<int> labels;
  std::uint64_t view_seed = 0;

  std::size_t size() const { return labels.size(); }
};

enum class Split { train, val, test };

// Partitions `num_tasks * classes_per_task` seeded-shuffled dataset classes
// into consecutive tasks and holds out `val_fraction` of each task's training
// samples for validation.
TaskStream build_split_stream(const Dataset& data, std::size_t num_tasks,
                              std::size_t classes_per_task, std::uint64_t seed,
                              double val_fraction = 0.1);

// Convenience overload that loads the dataset by id first.
TaskStream build_split_stream(const std::string& dataset_id, std::size_t num_tasks,
                              std::size_t classes_per_task, std::uint64_t seed,
                              const DataOptions& options);

// Gathers dataset samples of a split, relabeled to global stream classes.
LabeledBatch gather_batch(const Dataset& data, const TaskStream& stream, Split split,
                          std::span<const std::size_t> indices);

enum class AugmentPolicy { none, crop_flip };

AugmentPolicy parse_augment_policy(const std::string& name);
std::string to_string(AugmentPolicy policy);

// Pure function of (batch, policy, view_seed). crop_flip zero-pads by `pad`,
// takes a random crop of the original extent, and flips horizontally with
// probability 1/2, independently per sample.
LabeledBatch augment(const LabeledBatch& batch, AugmentPolicy policy, std::uint64_t view_seed,
                     std::size_t pad = 4);

// Structured-text stream descriptor: dataset id and normalization constants,
// seed, class map, per-task classes and split sizes.
void write_stream_descriptor(const TaskStream& stream, const DatasetDescriptor& descriptor,
                             const std::filesystem::path& path);

// Rebuilds the stream from a descriptor and verifies it reproduces the stored
// partition and split sizes exactly (IoError otherwise).
TaskStream read_stream_descriptor(const std::filesystem::path& path, const Dataset& data);

}  // namespace hcl
