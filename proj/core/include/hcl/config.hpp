#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hcl/distillation.hpp"
#include "hcl/inversion.hpp"
#include "hcl/metrics.hpp"
#include "hcl/task_stream.hpp"

namespace hcl {

enum class Method { finetune, kd, kd_qdi, kd_buffer, er, di };

Method parse_method(const std::string& s);
std::string to_string(Method m);
bool uses_teacher(Method m);
bool uses_buffer(Method m);
bool uses_synthesis(Method m);

enum class BufferInsertion { per_batch, task_end };

BufferInsertion parse_buffer_insertion(const std::string& s);
std::string to_string(BufferInsertion b);

struct StreamConfig {
  std::string dataset = "blobs";
  std::size_t num_tasks = 5;
  std::size_t classes_per_task = 2;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  std::size_t train_per_class = 0;
  std::size_t test_per_class = 0;
  AugmentPolicy augment = AugmentPolicy::crop_flip;
  bool operator==(const StreamConfig&) const = default;
};

struct TrainConfig {
  double lr = 0.03;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  // Epochs at the start of tasks t >= 2 that update only the output layer.
  std::size_t warmup_epochs = 0;
  // Copy the previous model's weights when consecutive specs are identical.
  bool warm_start = true;
  // Restrict the task loss to the current task's classes (ablation).
  bool task_identity = false;
  // Feed student and teacher the same augmented view.
  bool consistent_views = true;
  bool operator==(const TrainConfig&) const = default;
};

struct ReplayConfig {
  std::size_t capacity = 200;
  std::size_t batch_size = 32;
  BufferInsertion insertion = BufferInsertion::per_batch;
  bool operator==(const ReplayConfig&) const = default;
};

struct ExperimentConfig {
  // Label used to group runs in reports; defaults to the method id.
  std::string name;
  Method method = Method::finetune;
  StreamConfig stream;
  // One architecture per task ("builder[:width[:depth]]"); a single entry is
  // used for every task.
  std::vector<std::string> schedule{"residual_cnn"};
  KdConfig kd;
  InversionConfig inversion;
  ReplayConfig replay;
  TrainConfig train;
  std::vector<EvalMode> eval_modes{EvalMode::task_il, EvalMode::class_il};
  std::vector<std::uint64_t> seeds{0, 1, 2};

  bool operator==(const ExperimentConfig&) const = default;

  // Throws ConfigError naming the offending key.
  void validate() const;

  // Schedule entry for task t (1-based) after broadcasting.
  const std::string& architecture_for(int t) const;
};

// Strict parse of a flat dotted-key document: unknown keys, malformed values
// and a missing `method` are ConfigErrors that name the key.
ExperimentConfig parse_config_text(const std::string& text, const std::string& source = "<text>");
ExperimentConfig parse_config(const std::filesystem::path& path);

// Canonical form: every key, sorted, shortest round-trip numbers.
std::string serialize_config(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);

}  // namespace hcl
