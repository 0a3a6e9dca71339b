#include "hcl/task_stream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hcl/errors.hpp"
#include "hcl/kv_file.hpp"
#include "hcl/random.hpp"

namespace hcl {

const TaskSpec& TaskStream::task(int t) const {
  if (t < 1 || static_cast<std::size_t>(t) > tasks.size()) {
    throw ContractViolation("task index " + std::to_string(t) + " outside 1.." +
                            std::to_string(tasks.size()));
  }
  return tasks[static_cast<std::size_t>(t - 1)];
}

std::vector<int> TaskStream::prior_classes(int t) const {
  std::vector<int> out;
  for (int s = 1; s < t; ++s) {
    const auto& c = task(s).class_ids;
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

TaskStream build_split_stream(const Dataset& data, std::size_t num_tasks,
                              std::size_t classes_per_task, std::uint64_t seed,
                              double val_fraction) {
  const std::size_t available = data.descriptor.num_classes;
  if (num_tasks == 0 || classes_per_task == 0) {
    throw ConfigError("num_tasks and classes_per_task must be positive");
  }
  if (num_tasks * classes_per_task > available) {
    throw ConfigError("stream needs " + std::to_string(num_tasks * classes_per_task) +
                      " classes but dataset '" + data.descriptor.id + "' has " +
                      std::to_string(available));
  }
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw ConfigError("validation fraction must lie in [0, 1)");
  }

  TaskStream stream;
  stream.dataset_id = data.descriptor.id;
  stream.seed = seed;
  stream.val_fraction = val_fraction;
  stream.total_classes = num_tasks * classes_per_task;

  std::vector<int> perm(available);
  std::iota(perm.begin(), perm.end(), 0);
  Rng class_rng = make_rng({seed, 0xc1a55ULL});
  std::shuffle(perm.begin(), perm.end(), class_rng);
  stream.source_classes.assign(perm.begin(),
                               perm.begin() + static_cast<std::ptrdiff_t>(stream.total_classes));

  std::vector<int> global_of(available, -1);
  for (std::size_t g = 0; g < stream.total_classes; ++g) {
    global_of[static_cast<std::size_t>(stream.source_classes[g])] = static_cast<int>(g);
  }

  for (std::size_t t = 0; t < num_tasks; ++t) {
    TaskSpec spec;
    spec.task_index = static_cast<int>(t + 1);
    for (std::size_t j = 0; j < classes_per_task; ++j) {
      spec.class_ids.push_back(static_cast<int>(t * classes_per_task + j));
    }
    auto in_task = [&](int dataset_label) {
      const int g = global_of[static_cast<std::size_t>(dataset_label)];
      return g >= 0 && static_cast<std::size_t>(g) / classes_per_task == t;
    };
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < data.train_labels.size(); ++i) {
      if (in_task(data.train_labels[i])) train.push_back(i);
    }
    for (std::size_t i = 0; i < data.test_labels.size(); ++i) {
      if (in_task(data.test_labels[i])) spec.test_indices.push_back(i);
    }
    Rng split_rng = make_rng({seed, 0x5917ULL, t});
    std::shuffle(train.begin(), train.end(), split_rng);
    std::size_t n_val = 0;
    if (val_fraction > 0.0 && !train.empty()) {
      n_val = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(train.size()))));
    }
    spec.val_indices.assign(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(n_val));
    spec.train_indices.assign(train.begin() + static_cast<std::ptrdiff_t>(n_val), train.end());
    std::sort(spec.val_indices.begin(), spec.val_indices.end());
    spec.n_train = spec.train_indices.size();
    spec.n_val = spec.val_indices.size();
    spec.n_test = spec.test_indices.size();
    stream.tasks.push_back(std::move(spec));
  }
  return stream;
}

TaskStream build_split_stream(const std::string& dataset_id, std::size_t num_tasks,
                              std::size_t classes_per_task, std::uint64_t seed,
                              const DataOptions& options) {
  const Dataset data = load_dataset(dataset_id, options);
  return build_split_stream(data, num_tasks, classes_per_task, seed);
}

LabeledBatch gather_batch(const Dataset& data, const TaskStream& stream, Split split,
                          std::span<const std::size_t> indices) {
  const bool is_test = split == Split::test;
  const Tensor& inputs = is_test ? data.test_inputs : data.train_inputs;
  const std::vector<int>& labels = is_test ? data.test_labels : data.train_labels;
  std::vector<int> global_of(data.descriptor.num_classes, -1);
  for (std::size_t g = 0; g < stream.source_classes.size(); ++g) {
    global_of[static_cast<std::size_t>(stream.source_classes[g])] = static_cast<int>(g);
  }
  LabeledBatch batch;
  batch.inputs = inputs.gather(indices);
  for (std::size_t i : indices) {
    const int g = global_of[static_cast<std::size_t>(labels[i])];
    if (g < 0) throw ContractViolation("sample outside the stream's classes");
    batch.labels.push_back(g);
  }
  return batch;
}

AugmentPolicy parse_augment_policy(const std::string& name) {
  if (name == "none") return AugmentPolicy::none;
  if (name == "crop_flip") return AugmentPolicy::crop_flip;
  throw ConfigError("unknown augmentation policy '" + name + "'");
}

std::string to_string(AugmentPolicy policy) {
  return policy == AugmentPolicy::none ? "none" : "crop_flip";
}

LabeledBatch augment(const LabeledBatch& batch, AugmentPolicy policy, std::uint64_t view_seed,
                     std::size_t pad) {
  LabeledBatch out;
  out.labels = batch.labels;
  out.view_seed = view_seed;
  if (policy == AugmentPolicy::none) {
    out.inputs = batch.inputs;
    return out;
  }
  const auto& s = batch.inputs.shape();
  out.inputs = Tensor(s);
  const long span = static_cast<long>(2 * pad + 1);
  for (std::size_t n = 0; n < s.n; ++n) {
    const std::uint64_t h = derive_seed({view_seed, n});
    const long oy = static_cast<long>(h % static_cast<std::uint64_t>(span)) - static_cast<long>(pad);
    const long ox =
        static_cast<long>((h >> 16) % static_cast<std::uint64_t>(span)) - static_cast<long>(pad);
    const bool flip = ((h >> 40) & 1U) != 0;
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < s.h; ++y) {
        const long sy = static_cast<long>(y) + oy;
        for (std::size_t x = 0; x < s.w; ++x) {
          const std::size_t cx = flip ? s.w - 1 - x : x;
          const long sx = static_cast<long>(cx) + ox;
          double v = 0.0;
          if (sy >= 0 && sy < static_cast<long>(s.h) && sx >= 0 && sx < static_cast<long>(s.w)) {
            v = batch.inputs.at(n, c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
          }
          out.inputs.at(n, c, y, x) = v;
        }
      }
    }
  }
  return out;
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::vector<std::string> s;
  for (int x : v) s.push_back(std::to_string(x));
  return join_list(s);
}

std::string join_reals(const std::vector<double>& v) {
  std::vector<std::string> s;
  for (double x : v) s.push_back(format_real(x));
  return join_list(s);
}

}  // namespace

void write_stream_descriptor(const TaskStream& stream, const DatasetDescriptor& descriptor,
                             const std::filesystem::path& path) {
  KeyValueDoc doc;
  doc.set("format", "hcl-stream-1");
  doc.set("dataset.id", stream.dataset_id);
  doc.set("dataset.shape", std::to_string(descriptor.channels) + "x" +
                               std::to_string(descriptor.height) + "x" +
                               std::to_string(descriptor.width));
  doc.set("dataset.mean", join_reals(descriptor.mean));
  doc.set("dataset.std", join_reals(descriptor.stddev));
  doc.set("seed", std::to_string(stream.seed));
  doc.set("val_fraction", format_real(stream.val_fraction));
  doc.set("total_classes", std::to_string(stream.total_classes));
  doc.set("source_classes", join_ints(stream.source_classes));
  doc.set("num_tasks", std::to_string(stream.tasks.size()));
  for (const auto& t : stream.tasks) {
    const std::string p = "task." + std::to_string(t.task_index) + ".";
    doc.set(p + "classes", join_ints(t.class_ids));
    doc.set(p + "n_train", std::to_string(t.n_train));
    doc.set(p + "n_val", std::to_string(t.n_val));
    doc.set(p + "n_test", std::to_string(t.n_test));
  }
  doc.write_file(path);
}

TaskStream read_stream_descriptor(const std::filesystem::path& path, const Dataset& data) {
  const KeyValueDoc doc = KeyValueDoc::read_file(path);
  if (doc.at("format") != "hcl-stream-1") throw IoError("unknown stream descriptor format");
  if (doc.at("dataset.id") != data.descriptor.id) {
    throw IoError("descriptor dataset '" + doc.at("dataset.id") + "' does not match '" +
                  data.descriptor.id + "'");
  }
  const std::size_t num_tasks = std::stoul(doc.at("num_tasks"));
  const std::size_t total = std::stoul(doc.at("total_classes"));
  if (num_tasks == 0 || total % num_tasks != 0) throw IoError("inconsistent stream descriptor");
  TaskStream stream = build_split_stream(data, num_tasks, total / num_tasks,
                                         std::stoull(doc.at("seed")),
                                         std::stod(doc.at("val_fraction")));
  if (join_ints(stream.source_classes) != doc.at("source_classes")) {
    throw IoError("stream descriptor class map does not replay");
  }
  for (const auto& t : stream.tasks) {
    const std::string p = "task." + std::to_string(t.task_index) + ".";
    if (join_ints(t.class_ids) != doc.at(p + "classes") ||
        std::to_string(t.n_train) != doc.at(p + "n_train") ||
        std::to_string(t.n_val) != doc.at(p + "n_val") ||
        std::to_string(t.n_test) != doc.at(p + "n_test")) {
      throw IoError("stream descriptor task " + std::to_string(t.task_index) + " does not replay");
    }
  }
  return stream;
}

}  // namespace hcl
