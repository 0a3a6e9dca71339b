#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "hcl/tensor.hpp"

namespace hcl {

// Identity and per-channel normalization constants of a dataset. Images are
// stored normalized: (pixel - mean[c]) / stddev[c] with pixels in [0, 1].
struct DatasetDescriptor {
  std::string id;
  std::size_t num_classes = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> mean;
  std::vector<double> stddev;

  // Normalized value of pixel intensity 0 and 1 for channel c.
  double lower_bound(std::size_t c) const { return (0.0 - mean[c]) / stddev[c]; }
  double upper_bound(std::size_t c) const { return (1.0 - mean[c]) / stddev[c]; }
};

struct Dataset {
  DatasetDescriptor descriptor;
  Tensor train_inputs;
  std::vector<int> train_labels;
  Tensor test_inputs;
  std::vector<int> test_labels;
};

struct DataOptions {
  std::filesystem::path data_dir;
  // Per-class caps on loaded samples; 0 keeps everything.
  std::size_t train_per_class = 0;
  std::size_t test_per_class = 0;
};

// Known ids: "blobs" (synthetic, 10 classes, 3x16x16) and "cifar10" (binary
// release under <data_dir>/cifar-10-batches-bin). Unknown ids or missing files
// raise ConfigError.
Dataset load_dataset(const std::string& dataset_id, const DataOptions& options);

std::vector<std::string> dataset_ids();

// HCL_DATA_DIR when set, otherwise "data".
std::filesystem::path default_data_dir();

// Synthetic blob images: each class is a fixed pair of colored Gaussian parts
// drawn from a shared vocabulary; samples jitter part positions and
// amplitudes, optionally add a weak distractor part, and add pixel noise.
Dataset make_blobs(std::size_t train_per_class, std::size_t test_per_class);

}  // namespace hcl
