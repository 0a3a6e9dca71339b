#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hcl/config.hpp"
#include "hcl/dataset.hpp"
#include "hcl/metrics.hpp"
#include "hcl/model_zoo.hpp"
#include "hcl/replay.hpp"
#include "hcl/results_io.hpp"
#include "hcl/task_stream.hpp"

namespace hcl {

struct EpochLog {
  std::size_t epoch = 0;
  double total = 0.0;
  double task = 0.0;
  std::optional<double> kd;
  std::optional<double> synthetic_kd;
  std::optional<double> buffer;
  double val_accuracy = 0.0;
};

struct TaskLog {
  int task = 0;
  std::string architecture;
  bool warm_started = false;
  double kd_scale = 1.0;
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  double seconds = 0.0;
  std::size_t synthesis_steps = 0;
  std::vector<double> synthesis_trace;  // loss per step of the first synthetic batch
  std::optional<std::uint64_t> teacher_fingerprint;
  std::uint64_t model_fingerprint = 0;
};

// Holds only the most recent finalized model. Asking for anything older than
// the previous task is a ContractViolation.
class ModelLineage {
 public:
  // Replaces the held model; the previous one is released first.
  void finalize(int t, std::unique_ptr<Model> model);
  // Starts the lineage at a model restored from a checkpoint.
  void resume_at(int t, std::unique_ptr<Model> model);
  // Model t-1 for a student at task t, or nullptr when t == 1.
  const Model* previous(int t) const;
  const Model& get(int index, int current_t) const;
  int latest_index() const { return index_; }

 private:
  int index_ = 0;
  std::unique_ptr<Model> model_;
};

struct TaskContext {
  const Dataset& data;
  const TaskStream& stream;
  const ExperimentConfig& cfg;
  std::uint64_t seed = 0;
  // Optional: PPM grids of synthetic batches.
  std::filesystem::path dump_synth;
  // Optional: on-disk cache for synthetic batches.
  std::filesystem::path synth_cache;
};

struct TaskOutcome {
  std::unique_ptr<Model> model;  // best validation snapshot, eval mode
  TaskLog log;
};

// Trains the student for task t against the frozen `prev` model. The buffer,
// when given, is replayed and then updated with task-t samples.
TaskOutcome train_task(const TaskContext& ctx, int t, const Model* prev, ReplayBuffer* buffer);

// The KD settings a method actually trains with: baselines use one-hot
// targets and drop the distillation terms they do not have.
KdConfig effective_kd(const ExperimentConfig& cfg);
InversionConfig effective_inversion(const ExperimentConfig& cfg);

struct RunOptions {
  // Run directory root; empty keeps everything in memory.
  std::filesystem::path out_dir;
  std::filesystem::path data_dir;
  std::filesystem::path dump_synth;
  bool resume = false;
  // Stop (as if interrupted) after this task; 0 runs to the end.
  int stop_after_task = 0;
  // Preloaded dataset; must match cfg.stream.dataset.
  const Dataset* dataset = nullptr;
  std::function<void(const std::string&)> log;
};

struct RunResult {
  RunRecord record;
  std::vector<TaskLog> logs;  // tasks trained by this call
  long peak_live_models = 0;
  bool finished = false;
  std::filesystem::path run_dir;
};

std::filesystem::path run_directory(const std::filesystem::path& out_dir, const ExperimentConfig& cfg,
                                    std::uint64_t seed);

DataOptions data_options(const ExperimentConfig& cfg, const std::filesystem::path& data_dir);

// Trains tasks 1..T in order, evaluating after each. With an out_dir the run
// directory receives the config snapshot, stream descriptor, per-task
// checkpoints, accuracy CSVs, resume state and the final report.
RunResult continual_run(const ExperimentConfig& cfg, std::uint64_t seed, const RunOptions& options = {});

}  // namespace hcl
