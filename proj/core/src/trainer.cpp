#include "hcl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include "hcl/distillation.hpp"
#include "hcl/errors.hpp"
#include "hcl/hash.hpp"
#include "hcl/inversion.hpp"
#include "hcl/kv_file.hpp"
#include "hcl/optim.hpp"
#include "hcl/random.hpp"

namespace hcl {

namespace {

// Stream tags for derive_seed, so independent draws never share a seed.
enum : std::uint64_t {
  kInitTag = 0x11,
  kOrderTag,
  kViewTag,
  kTeacherViewTag,
  kBufferTag,
  kBufferViewTag,
  kSynthInitTag,
  kSynthTag,
  kTaskEndTag,
};

}  // namespace

void ModelLineage::finalize(int t, std::unique_ptr<Model> model) {
  if (t != index_ + 1) {
    throw ContractViolation("model " + std::to_string(t) + " finalized after model " +
                            std::to_string(index_));
  }
  model_.reset();
  model_ = std::move(model);
  model_->set_mode(Mode::eval);
  index_ = t;
}

void ModelLineage::resume_at(int t, std::unique_ptr<Model> model) {
  index_ = t - 1;
  model_.reset();
  finalize(t, std::move(model));
}

const Model* ModelLineage::previous(int t) const {
  if (t == 1) return nullptr;
  return &get(t - 1, t);
}

const Model& ModelLineage::get(int index, int current_t) const {
  if (index < current_t - 1) {
    throw ContractViolation("model " + std::to_string(index) + " requested at task " +
                            std::to_string(current_t) + "; only the most recent model is kept");
  }
  if (index != index_ || model_ == nullptr) {
    throw ContractViolation("model " + std::to_string(index) + " is not finalized");
  }
  return *model_;
}

KdConfig effective_kd(const ExperimentConfig& cfg) {
  KdConfig kd = cfg.kd;
  switch (cfg.method) {
    case Method::finetune:
    case Method::er:
      kd.psi = 0.0;
      kd.alpha = 0.0;
      kd.beta = 0.0;
      break;
    case Method::di:
      kd.psi = 0.0;
      kd.alpha = 0.0;
      break;
    case Method::kd:
    case Method::kd_buffer:
      kd.beta = 0.0;
      break;
    case Method::kd_qdi:
      break;
  }
  return kd;
}

InversionConfig effective_inversion(const ExperimentConfig& cfg) {
  InversionConfig inv = cfg.inversion;
  if (cfg.method == Method::di) inv.init_mode = InitMode::gaussian;
  return inv;
}

namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<SyntheticBatch> prepare_synthetic(const TaskContext& ctx, int t, const Model& teacher,
                                              const std::vector<std::size_t>& train_indices) {
  const ExperimentConfig& cfg = ctx.cfg;
  const InversionConfig inv = effective_inversion(cfg);
  const PixelRange range = PixelRange::from(ctx.data.descriptor);
  const std::uint64_t synth_seed = derive_seed({ctx.seed, kSynthTag});
  std::vector<SyntheticBatch> out;
  for (std::size_t b = 0; b < inv.num_batches; ++b) {
    std::filesystem::path cached;
    if (!ctx.synth_cache.empty()) {
      cached = ctx.synth_cache / (synthesis_cache_key(t, ctx.seed, inv, b) + ".bin");
      if (std::filesystem::exists(cached)) {
        out.push_back(load_synthetic(cached));
        continue;
      }
    }
    // The initialization batch doubles as the source of approximate feature
    // statistics for teachers without running statistics.
    Rng rng = make_rng({ctx.seed, static_cast<std::uint64_t>(t), b, kSynthInitTag});
    std::vector<std::size_t> pick = train_indices;
    std::shuffle(pick.begin(), pick.end(), rng);
    pick.resize(std::min(pick.size(), cfg.train.batch_size));
    const LabeledBatch init = gather_batch(ctx.data, ctx.stream, Split::train, pick);

    SynthesisRequest request;
    request.current_batch = &init.inputs;
    request.batch_size = cfg.train.batch_size;
    request.clamp = &range;
    SyntheticBatch batch =
        synthesize(teacher, request, ctx.stream, t, inv, derive_seed({synth_seed, b}));
    if (!cached.empty()) {
      std::filesystem::create_directories(ctx.synth_cache);
      save_synthetic(batch, cached);
    }
    out.push_back(std::move(batch));
  }
  if (!ctx.dump_synth.empty()) {
    std::filesystem::create_directories(ctx.dump_synth);
    for (std::size_t b = 0; b < out.size(); ++b) {
      const std::string file = cfg.name + "_seed" + std::to_string(ctx.seed) + "_t" +
                               std::to_string(t) + "_b" + std::to_string(b) + ".ppm";
      write_image_grid(out[b].inputs, ctx.data.descriptor, ctx.dump_synth / file);
    }
  }
  return out;
}

double validation_accuracy(const Model& model, const TaskContext& ctx, int t) {
  return mean_of(evaluate(model, ctx.data, ctx.stream, t, EvalMode::task_il, Split::val));
}

}  // namespace

TaskOutcome train_task(const TaskContext& ctx, int t, const Model* prev, ReplayBuffer* buffer) {
  const ExperimentConfig& cfg = ctx.cfg;
  cfg.validate();
  if (cfg.stream.num_tasks != ctx.stream.num_tasks()) {
    throw ConfigError("schedule: configured for " + std::to_string(cfg.stream.num_tasks) +
                      " tasks but the stream has " + std::to_string(ctx.stream.num_tasks()));
  }
  if (t > 1 && prev == nullptr) throw ContractViolation("task " + std::to_string(t) + " needs the previous model");
  if (prev != nullptr && prev->mode() != Mode::eval) throw ContractViolation("previous model must be frozen");

  const auto started = std::chrono::steady_clock::now();
  const TaskSpec& task = ctx.stream.task(t);
  const auto& d = ctx.data.descriptor;
  const ArchitectureSpec arch =
      parse_architecture(cfg.architecture_for(t), InputShape{d.channels, d.height, d.width});
  const std::uint64_t tu = static_cast<std::uint64_t>(t);

  TaskLog log;
  log.task = t;
  log.architecture = arch.name;

  std::unique_ptr<Model> student;
  if (cfg.train.warm_start && prev != nullptr && prev->spec() == arch &&
      prev->output_dim() == ctx.stream.total_classes) {
    student = std::make_unique<Model>(*prev);
    log.warm_started = true;
  } else {
    student = instantiate(arch, ctx.stream.total_classes, derive_seed({ctx.seed, tu, kInitTag}));
  }
  student->set_mode(Mode::train);

  const Model* teacher = uses_teacher(cfg.method) ? prev : nullptr;
  if (teacher != nullptr) log.teacher_fingerprint = teacher->fingerprint();
  const KdConfig kd = effective_kd(cfg);
  log.kd_scale = (kd.distance == KdDistance::kl && kd.tau_squared) ? kd.tau * kd.tau : 1.0;

  std::vector<SyntheticBatch> synthetic;
  if (uses_synthesis(cfg.method) && teacher != nullptr && kd.beta > 0.0) {
    synthetic = prepare_synthetic(ctx, t, *teacher, task.train_indices);
    for (const auto& s : synthetic) log.synthesis_steps += s.steps_used;
    log.synthesis_trace = synthetic.front().loss_trace;
  }

  const AugmentPolicy policy = cfg.stream.augment;
  const std::size_t batch_size = cfg.train.batch_size;
  const bool replay = uses_buffer(cfg.method) && buffer != nullptr;
  const std::vector<int>* task_classes = cfg.train.task_identity ? &task.class_ids : nullptr;

  Sgd sgd(cfg.train.lr, cfg.train.momentum, cfg.train.weight_decay);
  Gradients grads = student->make_gradients();
  std::vector<double> best_params = student->flat_parameters();
  std::vector<double> best_norm = student->flat_norm_state();
  double best_val = -1.0;

  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    std::vector<std::size_t> order = task.train_indices;
    Rng order_rng = make_rng({ctx.seed, tu, epoch, kOrderTag});
    std::shuffle(order.begin(), order.end(), order_rng);
    const std::size_t skip = (t > 1 && epoch < cfg.train.warmup_epochs) ? student->head_parameter_index() : 0;

    std::vector<double> totals, tasks, kds, synth_kds, buffers;
    std::size_t step = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size, ++step) {
      const std::size_t n = std::min(batch_size, order.size() - begin);
      if (n < 2) continue;  // a single sample gives degenerate batch statistics
      const LabeledBatch raw = gather_batch(ctx.data, ctx.stream, Split::train,
                                            std::span<const std::size_t>(order.data() + begin, n));
      const std::uint64_t view_seed = derive_seed({ctx.seed, tu, epoch, step, kViewTag});
      const LabeledBatch view = augment(raw, policy, view_seed);

      ObjectiveBatches batches;
      batches.task = &view;
      batches.task_classes = task_classes;
      LabeledBatch teacher_view;
      if (teacher != nullptr && !cfg.train.consistent_views) {
        teacher_view = augment(raw, policy, derive_seed({ctx.seed, tu, epoch, step, kTeacherViewTag}));
        batches.teacher_view = &teacher_view;
      }
      if (!synthetic.empty()) {
        const SyntheticBatch& s = synthetic[step % synthetic.size()];
        batches.synthetic = &s.inputs;
        batches.synthetic_teacher_logits = &s.teacher_logits;
      }
      LabeledBatch replayed;
      if (replay && !buffer->empty()) {
        const LabeledBatch drawn =
            buffer->sample_batch(cfg.replay.batch_size, derive_seed({ctx.seed, tu, epoch, step, kBufferTag}));
        replayed = augment(drawn, policy, derive_seed({ctx.seed, tu, epoch, step, kBufferViewTag}));
        batches.buffer = &replayed;
      }

      grads.zero();
      const ObjectiveBreakdown b = total_objective(*student, teacher, batches, kd, &grads);
      sgd.step(student->parameters(), grads, skip);

      totals.push_back(b.total);
      tasks.push_back(b.task);
      if (b.kd) kds.push_back(*b.kd);
      if (b.synthetic_kd) synth_kds.push_back(*b.synthetic_kd);
      if (b.buffer) buffers.push_back(*b.buffer);

      if (replay && cfg.replay.insertion == BufferInsertion::per_batch && epoch == 0) {
        buffer->insert_batch(raw);
      }
    }

    EpochLog e;
    e.epoch = epoch;
    e.total = mean_of(totals);
    e.task = mean_of(tasks);
    if (!kds.empty()) e.kd = mean_of(kds);
    if (!synth_kds.empty()) e.synthetic_kd = mean_of(synth_kds);
    if (!buffers.empty()) e.buffer = mean_of(buffers);

    student->set_mode(Mode::eval);
    e.val_accuracy = validation_accuracy(*student, ctx, t);
    student->set_mode(Mode::train);
    if (e.val_accuracy > best_val) {
      best_val = e.val_accuracy;
      log.best_epoch = epoch;
      best_params = student->flat_parameters();
      best_norm = student->flat_norm_state();
    }
    log.epochs.push_back(e);
  }

  student->set_flat_parameters(best_params);
  student->set_flat_norm_state(best_norm);
  student->set_mode(Mode::eval);
  log.best_val_accuracy = best_val;

  if (replay && cfg.replay.insertion == BufferInsertion::task_end) {
    std::vector<std::size_t> order = task.train_indices;
    Rng rng = make_rng({ctx.seed, tu, kTaskEndTag});
    std::shuffle(order.begin(), order.end(), rng);
    constexpr std::size_t kChunk = 256;
    for (std::size_t begin = 0; begin < order.size(); begin += kChunk) {
      const std::size_t n = std::min(kChunk, order.size() - begin);
      buffer->insert_batch(gather_batch(ctx.data, ctx.stream, Split::train,
                                        std::span<const std::size_t>(order.data() + begin, n)));
    }
  }

  log.model_fingerprint = student->fingerprint();
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return TaskOutcome{std::move(student), std::move(log)};
}

std::filesystem::path run_directory(const std::filesystem::path& out_dir, const ExperimentConfig& cfg,
                                    std::uint64_t seed) {
  return out_dir / cfg.name / ("seed_" + std::to_string(seed));
}

DataOptions data_options(const ExperimentConfig& cfg, const std::filesystem::path& data_dir) {
  DataOptions o;
  o.data_dir = data_dir.empty() ? default_data_dir() : data_dir;
  o.train_per_class = cfg.stream.train_per_class;
  o.test_per_class = cfg.stream.test_per_class;
  return o;
}

namespace {

constexpr const char* kConfigFile = "config.cfg";
constexpr const char* kStreamFile = "stream.txt";
constexpr const char* kProgressFile = "progress.txt";
constexpr const char* kBufferFile = "buffer.bin";

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int t) {
  return dir / ("model_t" + std::to_string(t) + ".ckpt");
}

void record_task(RunRecord& record, const TaskLog& log) {
  record.task_seconds.push_back(log.seconds);
  record.synthesis_steps.push_back(log.synthesis_steps);
  const std::string p = "t" + std::to_string(log.task) + ".";
  auto& total = record.loss_traces[p + "total"];
  auto& task = record.loss_traces[p + "task"];
  auto& val = record.loss_traces[p + "val_accuracy"];
  std::vector<double> kd, synth, buf;
  for (const auto& e : log.epochs) {
    total.push_back(e.total);
    task.push_back(e.task);
    val.push_back(e.val_accuracy);
    if (e.kd) kd.push_back(*e.kd);
    if (e.synthetic_kd) synth.push_back(*e.synthetic_kd);
    if (e.buffer) buf.push_back(*e.buffer);
  }
  if (!kd.empty()) record.loss_traces[p + "kd"] = kd;
  if (!synth.empty()) record.loss_traces[p + "synthetic_kd"] = synth;
  if (!buf.empty()) record.loss_traces[p + "buffer"] = buf;
  if (!log.synthesis_trace.empty()) record.loss_traces[p + "synthesis"] = log.synthesis_trace;
}

}  // namespace

RunResult continual_run(const ExperimentConfig& cfg, std::uint64_t seed, const RunOptions& options) {
  cfg.validate();
  auto say = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };

  Dataset loaded;
  const Dataset* data = options.dataset;
  if (data == nullptr) {
    loaded = load_dataset(cfg.stream.dataset, data_options(cfg, options.data_dir));
    data = &loaded;
  } else if (data->descriptor.id != cfg.stream.dataset) {
    throw ConfigError("stream.dataset: preloaded dataset is '" + data->descriptor.id + "'");
  }
  TaskStream stream = build_split_stream(*data, cfg.stream.num_tasks, cfg.stream.classes_per_task,
                                         cfg.stream.seed, cfg.stream.val_fraction);
  const int T = static_cast<int>(stream.num_tasks());

  RunResult result;
  RunRecord& record = result.record;
  record.name = cfg.name;
  record.method = to_string(cfg.method);
  record.buffer = uses_buffer(cfg.method);
  record.config_hash = config_hash(cfg);
  record.seed = seed;
  for (EvalMode m : cfg.eval_modes) record.matrices.emplace(m, AccuracyMatrix(stream.num_tasks(), m));

  std::optional<ReplayBuffer> buffer;
  if (uses_buffer(cfg.method)) buffer.emplace(cfg.replay.capacity, derive_seed({seed, kBufferTag}));

  ModelLineage lineage;
  int start = 1;
  std::filesystem::path dir;
  if (!options.out_dir.empty()) {
    dir = run_directory(options.out_dir, cfg, seed);
    result.run_dir = dir;
    std::filesystem::create_directories(dir);
    if (options.resume && std::filesystem::exists(dir / kProgressFile)) {
      const ExperimentConfig stored = parse_config(dir / kConfigFile);
      if (config_hash(stored) != record.config_hash) {
        throw ConfigError("config differs from the snapshot in " + dir.string());
      }
      stream = read_stream_descriptor(dir / kStreamFile, *data);
      record = read_run_record(dir / kProgressFile);
      const int done = static_cast<int>(record.matrices.begin()->second.rows_written());
      if (done > 0) {
        lineage.resume_at(done, load_checkpoint(checkpoint_path(dir, done)));
      }
      if (buffer && std::filesystem::exists(dir / kBufferFile)) buffer = ReplayBuffer::load(dir / kBufferFile);
      start = done + 1;
      say("resuming " + dir.string() + " at task " + std::to_string(start));
    } else {
      KeyValueDoc::parse(serialize_config(cfg)).write_file(dir / kConfigFile);
      write_stream_descriptor(stream, data->descriptor, dir / kStreamFile);
    }
  }

  TaskContext ctx{*data, stream, cfg, seed, options.dump_synth,
                  dir.empty() ? std::filesystem::path{} : dir / "synth"};

  Model::reset_peak_live_count();
  for (int t = start; t <= T; ++t) {
    say("task " + std::to_string(t) + "/" + std::to_string(T) + ": " + cfg.architecture_for(t));
    const Model* prev = t > 1 ? lineage.previous(t) : nullptr;
    TaskOutcome outcome = train_task(ctx, t, prev, buffer ? &*buffer : nullptr);

    for (auto& [mode, matrix] : record.matrices) {
      matrix.set_row(static_cast<std::size_t>(t), evaluate(*outcome.model, *data, stream, t, mode));
    }
    record_task(record, outcome.log);
    if (!dir.empty()) save_checkpoint(*outcome.model, checkpoint_path(dir, t));
    lineage.finalize(t, std::move(outcome.model));
    result.logs.push_back(std::move(outcome.log));

    if (!dir.empty()) {
      if (buffer) buffer->save(dir / kBufferFile);
      for (const auto& [mode, matrix] : record.matrices) {
        write_accuracy_csv(matrix, dir / ("accuracy_" + to_string(mode) + ".csv"));
      }
      write_run_record(record, dir / kProgressFile, true);
    }
    if (options.stop_after_task == t && t < T) {
      result.peak_live_models = Model::peak_live_count();
      return result;
    }
  }

  result.finished = true;
  result.peak_live_models = Model::peak_live_count();
  if (!dir.empty()) write_run_record(record, dir / kReportFile);
  return result;
}

}  // namespace hcl
