#include "hcl/replay.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "hcl/errors.hpp"
#include "hcl/random.hpp"

namespace hcl {

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::uint64_t seed)
    : capacity_(capacity), seed_(seed) {
  if (capacity == 0) throw ConfigError("replay.capacity must be positive");
}

void ReplayBuffer::insert(std::span<const double> input, int label,
                          std::optional<std::size_t> forced_slot) {
  if (sample_shape_.per_sample() == 0) sample_shape_ = Shape{1, input.size(), 1, 1};
  const std::size_t per = sample_shape_.per_sample();
  if (input.size() != per) {
    throw ShapeError("replay buffer: sample has " + std::to_string(input.size()) +
                     " values, expected " + std::to_string(per));
  }
  ++seen_;
  std::size_t slot = capacity_;
  if (forced_slot) {
    if (*forced_slot >= capacity_) throw ContractViolation("replay buffer: forced slot out of range");
    slot = std::min(*forced_slot, labels_.size());
  } else if (labels_.size() < capacity_) {
    slot = labels_.size();
  } else {
    Rng rng = make_rng({seed_, seen_});
    std::uniform_int_distribution<std::uint64_t> pick(0, seen_ - 1);
    const std::uint64_t j = pick(rng);
    if (j < capacity_) slot = static_cast<std::size_t>(j);
  }
  if (slot >= capacity_) return;
  if (slot == labels_.size()) {
    inputs_.insert(inputs_.end(), input.begin(), input.end());
    labels_.push_back(label);
  } else {
    std::copy(input.begin(), input.end(), inputs_.begin() + static_cast<std::ptrdiff_t>(slot * per));
    labels_[slot] = label;
  }
}

void ReplayBuffer::insert_batch(const LabeledBatch& batch) {
  const Shape s = batch.inputs.shape();
  const Shape one{1, s.c, s.h, s.w};
  if (sample_shape_.per_sample() == 0) {
    sample_shape_ = one;
  } else if (!(sample_shape_ == one)) {
    throw ShapeError("replay buffer: batch shape " + s.str() + " does not match " +
                     sample_shape_.str());
  }
  const std::size_t per = one.per_sample();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    insert(std::span<const double>(batch.inputs.sample(i), per), batch.labels[i]);
  }
}

LabeledBatch ReplayBuffer::sample_batch(std::size_t n, std::uint64_t seed) const {
  if (labels_.empty()) throw EmptySourceError("replay buffer is empty");
  Rng rng = make_rng({seed, 0xb0ffe7ULL});
  std::vector<std::size_t> picks;
  if (n > labels_.size()) {
    std::uniform_int_distribution<std::size_t> pick(0, labels_.size() - 1);
    for (std::size_t i = 0; i < n; ++i) picks.push_back(pick(rng));
  } else {
    picks.resize(labels_.size());
    std::iota(picks.begin(), picks.end(), 0);
    std::shuffle(picks.begin(), picks.end(), rng);
    picks.resize(n);
  }
  const std::size_t per = sample_shape_.per_sample();
  LabeledBatch out;
  out.inputs = Tensor(Shape{n, sample_shape_.c, sample_shape_.h, sample_shape_.w});
  out.view_seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(inputs_.begin() + static_cast<std::ptrdiff_t>(picks[i] * per), per,
                out.inputs.sample(i));
    out.labels.push_back(labels_[picks[i]]);
  }
  return out;
}

std::span<const double> ReplayBuffer::input(std::size_t i) const {
  if (i >= labels_.size()) throw ContractViolation("replay buffer: index out of range");
  const std::size_t per = sample_shape_.per_sample();
  return {inputs_.data() + i * per, per};
}

namespace {

constexpr char kMagic[8] = {'H', 'C', 'L', 'B', 'U', 'F', '0', '1'};

void put(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

std::uint64_t get(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

}  // namespace

void ReplayBuffer::save(const std::filesystem::path& path) const {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp);
    os.write(kMagic, 8);
    for (std::uint64_t v : {std::uint64_t{capacity_}, seed_, seen_, std::uint64_t{sample_shape_.c},
                            std::uint64_t{sample_shape_.h}, std::uint64_t{sample_shape_.w},
                            std::uint64_t{labels_.size()}}) {
      put(os, v);
    }
    for (int l : labels_) put(os, static_cast<std::uint64_t>(static_cast<std::int64_t>(l)));
    os.write(reinterpret_cast<const char*>(inputs_.data()),
             static_cast<std::streamsize>(inputs_.size() * sizeof(double)));
    if (!os) throw IoError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

ReplayBuffer ReplayBuffer::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || !std::equal(magic, magic + 8, kMagic)) throw IoError(path.string() + ": not a buffer file");
  const auto capacity = get(is);
  const auto seed = get(is);
  ReplayBuffer b(static_cast<std::size_t>(capacity), seed);
  b.seen_ = get(is);
  b.sample_shape_.n = 1;
  b.sample_shape_.c = get(is);
  b.sample_shape_.h = get(is);
  b.sample_shape_.w = get(is);
  if (b.sample_shape_.per_sample() == 0) b.sample_shape_ = Shape{};
  const auto count = get(is);
  if (count > capacity) throw IoError(path.string() + ": more entries than capacity");
  for (std::uint64_t i = 0; i < count; ++i) b.labels_.push_back(static_cast<int>(static_cast<std::int64_t>(get(is))));
  b.inputs_.resize(count * b.sample_shape_.per_sample());
  is.read(reinterpret_cast<char*>(b.inputs_.data()),
          static_cast<std::streamsize>(b.inputs_.size() * sizeof(double)));
  if (!is) throw IoError(path.string() + ": truncated buffer file");
  return b;
}

}  // namespace hcl
