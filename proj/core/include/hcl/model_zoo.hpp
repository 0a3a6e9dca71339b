#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hcl/layers.hpp"
#include "hcl/tensor.hpp"

namespace hcl {

struct InputShape {
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  bool operator==(const InputShape&) const = default;
};

// One entry of the architecture stream. `width`/`depth` of 0 select the
// builder's defaults; `has_running_stats` is filled from the registry.
struct ArchitectureSpec {
  std::string name;
  std::string builder_id;
  std::size_t width = 0;
  std::size_t depth = 0;
  bool has_running_stats = false;
  InputShape input;

  bool operator==(const ArchitectureSpec&) const = default;

  // "builder[:width[:depth]]", the form used in config schedules.
  std::string to_string() const;
};

// Parses "builder[:width[:depth]]" and resolves it against the registry.
ArchitectureSpec parse_architecture(const std::string& text, const InputShape& input);

// Per-layer first and second moments of convolution outputs. Variances are
// variances, not standard deviations.
struct FeatureStats {
  std::vector<std::string> layer_ids;
  std::vector<std::vector<double>> means;
  std::vector<std::vector<double>> variances;
};

struct ForwardTrace {
  Mode mode = Mode::eval;
  std::vector<LayerCache> caches;
  std::vector<Tensor> taps;
};

// Parameter-shaped accumulators aligned with Model::parameters().
struct Gradients {
  std::vector<Tensor> values;
  void zero();
};

// A network from the zoo with a shared C_total-way output layer.
//
// Copying a model clones its layers. The number of simultaneously live models
// is tracked process-wide so the trainer's memory contract can be audited.
class Model {
 public:
  Model(ArchitectureSpec spec, std::size_t output_dim, std::vector<std::unique_ptr<Layer>> layers);
  Model(const Model& other);
  Model& operator=(const Model&) = delete;
  ~Model();

  const ArchitectureSpec& spec() const { return spec_; }
  std::size_t output_dim() const { return output_dim_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }

  // Forward in the current mode; in train mode the batch statistics are
  // folded into the running statistics.
  Tensor forward(const Tensor& x, ForwardTrace* trace = nullptr);

  // Read-only forward. Requires eval mode (ContractViolation otherwise).
  Tensor infer(const Tensor& x, ForwardTrace* trace = nullptr) const;

  // Forward without touching any state, regardless of the current mode.
  Tensor forward_pure(const Tensor& x, Mode mode, ForwardTrace* trace) const;

  // Backpropagates `grad_logits` through a recorded trace. Parameter gradients
  // are accumulated into `grads` when non-null. `tap_grads` adds gradients at
  // convolution outputs. Returns the gradient w.r.t. the input.
  Tensor backward(const ForwardTrace& trace, const Tensor& grad_logits, Gradients* grads,
                  const std::vector<Tensor>* tap_grads = nullptr) const;

  Gradients make_gradients() const;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> values);

  // Running means followed by running variances of every norm layer.
  std::vector<double> flat_norm_state() const;
  void set_flat_norm_state(std::span<const double> values);

  std::vector<std::string> tap_names() const;
  std::size_t tap_count() const { return tap_count_; }

  // Feature names of the norm layers, in order (aligned with taps).
  std::vector<std::string> norm_feature_names() const;
  std::vector<const BatchNorm2d*> norm_layers() const;

  // Hash of parameters and running statistics.
  std::uint64_t fingerprint() const;

  // Index of the first parameter tensor of the output layer.
  std::size_t head_parameter_index() const;

  static long live_count();
  static long peak_live_count();
  static void reset_peak_live_count();

 private:
  void check_input(const Tensor& x) const;

  ArchitectureSpec spec_;
  std::size_t output_dim_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::size_t param_tensors_ = 0;
  std::size_t tap_count_ = 0;
  Mode mode_ = Mode::train;

  static std::atomic<long> live_;
  static std::atomic<long> peak_;
};

using ModelHandle = Model;

struct BuilderInfo {
  std::string id;
  bool has_running_stats = false;
  std::size_t default_width = 0;
  std::size_t default_depth = 0;
  std::function<std::vector<std::unique_ptr<Layer>>(const ArchitectureSpec&, std::size_t, Rng&)>
      build;
};

const BuilderInfo& find_builder(const std::string& id);
std::vector<std::string> builder_ids();

// Fills defaults and `has_running_stats` for a builder id.
ArchitectureSpec make_spec(const std::string& builder_id, const InputShape& input,
                           std::size_t width = 0, std::size_t depth = 0);

std::unique_ptr<Model> instantiate(const ArchitectureSpec& spec, std::size_t output_dim,
                                   std::uint64_t seed);

Tensor forward_logits(Model& model, const Tensor& inputs);

// Running mean/var of every batch-norm layer, keyed by the convolution it
// normalizes. Throws UnsupportedArchitecture for models without running stats.
FeatureStats collect_running_stats(const Model& model);

// Per-layer batch mean and biased variance of every convolution output for one
// eval-mode forward of `batch`. Does not mutate the model.
FeatureStats approximate_feature_stats(const Model& model, const Tensor& batch);

// Channel means/variances of the taps recorded in a trace.
FeatureStats tap_statistics(const Model& model, const ForwardTrace& trace);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path);

}  // namespace hcl
