#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hcl/random.hpp"
#include "hcl/tensor.hpp"

namespace hcl {

enum class Mode { train, eval };

// Per-layer record of a forward pass, consumed by backward.
struct LayerCache {
  Tensor input;
  Tensor aux;
  std::vector<double> mean;
  std::vector<double> var;
  std::vector<LayerCache> children;
};

// Backward-pass routing. `param_grads` is either empty (input gradient only)
// or aligned with the owning model's parameter list. `tap_grads`, when set,
// holds an extra upstream gradient for each convolution output (tap); empty
// tensors mean "no contribution".
struct BackwardContext {
  std::span<Tensor> param_grads;
  const std::vector<Tensor>* tap_grads = nullptr;
};

class BatchNorm2d;

class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::unique_ptr<Layer> clone() const = 0;

  // `taps`, when non-null, is pre-sized to the model's tap count and receives
  // the output of every convolution.
  virtual Tensor forward(const Tensor& x, Mode mode, LayerCache& cache,
                         std::vector<Tensor>* taps) const = 0;

  virtual Tensor backward(const Tensor& grad_out, const LayerCache& cache, Mode mode,
                          BackwardContext& ctx) const = 0;

  // Folds the batch statistics recorded in a train-mode cache into running stats.
  virtual void commit_statistics(const LayerCache&) {}

  // Assigns parameter and tap slots in traversal order. Must visit children in
  // the same order as forward.
  virtual void bind(std::size_t& next_param, std::size_t& next_tap) {
    param_offset_ = next_param;
    (void)next_tap;
  }

  virtual void parameters(std::vector<Tensor*>& out) { (void)out; }
  virtual void parameters(std::vector<const Tensor*>& out) const { (void)out; }
  virtual void parameter_names(std::vector<std::string>& out) const { (void)out; }
  virtual void norm_layers(std::vector<BatchNorm2d*>& out) { (void)out; }
  virtual void norm_layers(std::vector<const BatchNorm2d*>& out) const { (void)out; }
  virtual void tap_names(std::vector<std::string>& out) const { (void)out; }

 protected:
  std::size_t param_offset_ = 0;
};

class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t stride, std::size_t padding, bool bias, Rng& rng);

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  Tensor forward(const Tensor& x, Mode mode, LayerCache& cache,
                 std::vector<Tensor>* taps) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, Mode mode,
                  BackwardContext& ctx) const override;
  void bind(std::size_t& next_param, std::size_t& next_tap) override;
  void parameters(std::vector<Tensor*>& out) override;
  void parameters(std::vector<const Tensor*>& out) const override;
  void parameter_names(std::vector<std::string>& out) const override;
  void tap_names(std::vector<std::string>& out) const override { out.push_back(name_); }

  const std::string& name() const { return name_; }

 private:
  std::size_t out_extent(std::size_t in) const { return (in + 2 * padding_ - kernel_) / stride_ + 1; }

  std::string name_;
  std::size_t in_channels_;
  std::size_t out_channels_;
  std::size_t kernel_;
  std::size_t stride_;
  std::size_t padding_;
  bool has_bias_;
  Tensor weight_;
  Tensor bias_;
  std::size_t tap_index_ = 0;
};

// Batch normalization over (N, H, W) per channel with affine parameters and
// exponential-moving-average running statistics.
class BatchNorm2d final : public Layer {
 public:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEpsilon = 1e-5;

  // `feature_name` names the convolution whose output this layer normalizes.
  BatchNorm2d(std::string feature_name, std::size_t channels);

  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm2d>(*this); }
  Tensor forward(const Tensor& x, Mode mode, LayerCache& cache,
                 std::vector<Tensor>* taps) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, Mode mode,
                  BackwardContext& ctx) const override;
  void commit_statistics(const LayerCache& cache) override;
  void bind(std::size_t& next_param, std::size_t& next_tap) override;
  void parameters(std::vector<Tensor*>& out) override;
  void parameters(std::vector<const Tensor*>& out) const override;
  void parameter_names(std::vector<std::string>& out) const override;
  void norm_layers(std::vector<BatchNorm2d*>& out) override { out.push_back(this); }
  void norm_layers(std::vector<const BatchNorm2d*>& out) const override { out.push_back(this); }

  const std::string& feature_name() const { return feature_name_; }
  std::vector<double>& running_mean() { return running_mean_; }
  std::vector<double>& running_var() { return running_var_; }
  const std::vector<double>& running_mean() const { return running_mean_; }
  const std::vector<double>& running_var() const { return running_var_; }

 private:
  std::string feature_name_;
  std::size_t channels_;
  Tensor gamma_;
  Tensor beta_;
  std::vector<double> running_mean_;
  std::vector<double> running_var_;
};

class Relu final : public Layer {
 public:
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }
  Tensor forward(const Tensor& x, Mode mode, LayerCache& cache,
                 std::vector<Tensor>* taps) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, Mode mode,
                  BackwardContext& ctx) const override;
};

// 2x2 average pooling with stride 2 (odd trailing rows/columns are dropped).
class AvgPool2d final : public Layer {
 public:
  std::unique_ptr<Layer> clone() const override { return std::make_unique<AvgPool2d>(*this); }
  Tensor forward(const Tensor& x, Mode mode, LayerCache& cache,
                 std::vector<Tensor>* taps) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, Mode mode,
                  BackwardContext& ctx) const override;
};

class GlobalAvgPool final : public Layer {
 public:
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
  Tensor forward(const Tensor& x, Mode mode, LayerCache& cache,
                 std::vector<Tensor>* taps) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, Mode mode,
                  BackwardContext& ctx) const override;
};

// Fully connected layer over the flattened sample; output is N x out x 1 x 1.
class Linear final : public Layer {
 public:
  Linear(std::string name, std::size_t in_features, std::size_t out_features, Rng& rng);

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }
  Tensor forward(const Tensor& x, Mode mode, LayerCache& cache,
                 std::vector<Tensor>* taps) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, Mode mode,
                  BackwardContext& ctx) const override;
  void bind(std::size_t& next_param, std::size_t& next_tap) override;
  void parameters(std::vector<Tensor*>& out) override;
  void parameters(std::vector<const Tensor*>& out) const override;
  void parameter_names(std::vector<std::string>& out) const override;

 private:
  std::string name_;
  std::size_t in_features_;
  std::size_t out_features_;
  Tensor weight_;
  Tensor bias_;
};

// conv-bn-relu-conv-bn plus identity or 1x1 conv-bn shortcut, then relu.
class ResidualBlock final : public Layer {
 public:
  ResidualBlock(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                std::size_t stride, Rng& rng);
  ResidualBlock(const ResidualBlock& other);
  ResidualBlock& operator=(const ResidualBlock&) = delete;

  std::unique_ptr<Layer> clone() const override { return std::make_unique<ResidualBlock>(*this); }
  Tensor forward(const Tensor& x, Mode mode, LayerCache& cache,
                 std::vector<Tensor>* taps) const override;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, Mode mode,
                  BackwardContext& ctx) const override;
  void commit_statistics(const LayerCache& cache) override;
  void bind(std::size_t& next_param, std::size_t& next_tap) override;
  void parameters(std::vector<Tensor*>& out) override;
  void parameters(std::vector<const Tensor*>& out) const override;
  void parameter_names(std::vector<std::string>& out) const override;
  void norm_layers(std::vector<BatchNorm2d*>& out) override;
  void norm_layers(std::vector<const BatchNorm2d*>& out) const override;
  void tap_names(std::vector<std::string>& out) const override;

 private:
  // Children in forward order: conv1, bn1, relu, conv2, bn2 [, sc_conv, sc_bn].
  std::vector<std::unique_ptr<Layer>> main_;
  std::vector<std::unique_ptr<Layer>> shortcut_;
};

}  // namespace hcl
