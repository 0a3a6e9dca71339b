#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "hcl/task_stream.hpp"
#include "hcl/tensor.hpp"

namespace hcl {

// Reservoir-sampled store of normalized inputs and global labels.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 200, std::uint64_t seed = 0);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  std::uint64_t seen_count() const { return seen_; }

  // Offers one sample. While underfull it is always kept; afterwards it
  // replaces a uniformly chosen slot with probability capacity / seen_count.
  // `forced_slot` overrides the random draw (accept into that slot). A buffer
  // that has not seen a batch yet treats a bare sample as Cx1x1.
  void insert(std::span<const double> input, int label,
              std::optional<std::size_t> forced_slot = std::nullopt);
  void insert_batch(const LabeledBatch& batch);

  // Uniform draw, without replacement when n <= size() and with replacement
  // otherwise. Throws EmptySourceError on an empty buffer.
  LabeledBatch sample_batch(std::size_t n, std::uint64_t seed) const;

  // Pixels of stored sample i.
  std::span<const double> input(std::size_t i) const;
  int label(std::size_t i) const { return labels_.at(i); }
  const std::vector<int>& labels() const { return labels_; }
  const Shape& sample_shape() const { return sample_shape_; }

  void save(const std::filesystem::path& path) const;
  static ReplayBuffer load(const std::filesystem::path& path);

  bool operator==(const ReplayBuffer& other) const = default;

 private:
  std::size_t capacity_;
  std::uint64_t seed_;
  std::uint64_t seen_ = 0;
  Shape sample_shape_{};
  std::vector<double> inputs_;
  std::vector<int> labels_;
};

}  // namespace hcl
