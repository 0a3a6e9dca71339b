#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "hcl/errors.hpp"
#include "hcl/replay.hpp"
#include "testing.hpp"

namespace hcl {
namespace {

void fill(ReplayBuffer& b, int count, int first = 0) {
  for (int i = first; i < first + count; ++i) {
    const double v = static_cast<double>(i);
    b.insert(std::span<const double>(&v, 1), i);
  }
}

TEST(ReplayBuffer, KeepsEverythingWhileUnderfull) {
  ReplayBuffer b(10, 0);
  EXPECT_TRUE(b.empty());
  fill(b, 7);
  ASSERT_EQ(b.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(b.label(i), static_cast<int>(i));
    EXPECT_EQ(b.input(i)[0], static_cast<double>(i));
  }
  EXPECT_EQ(b.sample_shape(), (Shape{1, 1, 1, 1}));
}

TEST(ReplayBuffer, NeverExceedsCapacityAndCountsSeen) {
  ReplayBuffer b(5, 3);
  fill(b, 1000);
  EXPECT_EQ(b.size(), 5u);
  EXPECT_EQ(b.seen_count(), 1000u);
  std::set<int> labels(b.labels().begin(), b.labels().end());
  EXPECT_EQ(labels.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(b.input(i)[0], static_cast<double>(b.label(i)));
}

TEST(ReplayBuffer, ForcedSlotReplacesThatSlot) {
  ReplayBuffer b(3, 0);
  fill(b, 3);
  const double v = 42.0;
  b.insert(std::span<const double>(&v, 1), 42, 1);
  EXPECT_EQ(b.labels(), (std::vector<int>{0, 42, 2}));
  EXPECT_EQ(b.seen_count(), 4u);
  EXPECT_THROW(b.insert(std::span<const double>(&v, 1), 1, 3), ContractViolation);
}

TEST(ReplayBuffer, RejectsZeroCapacityAndShapeChanges) {
  EXPECT_THROW(ReplayBuffer(0, 0), ConfigError);
  ReplayBuffer b(4, 0);
  LabeledBatch batch{testing::random_tensor({2, 3, 4, 4}, 1), {0, 1}};
  b.insert_batch(batch);
  EXPECT_EQ(b.sample_shape(), (Shape{1, 3, 4, 4}));
  LabeledBatch other{testing::random_tensor({2, 3, 5, 5}, 1), {0, 1}};
  EXPECT_THROW(b.insert_batch(other), ShapeError);
}

TEST(ReplayBuffer, SamplingAnEmptyBufferThrows) {
  ReplayBuffer b(4, 0);
  EXPECT_THROW(b.sample_batch(2, 0), EmptySourceError);
}

TEST(ReplayBuffer, SamplesWithoutReplacementUpToSize) {
  ReplayBuffer b(20, 0);
  fill(b, 20);
  const LabeledBatch all = b.sample_batch(20, 5);
  std::vector<int> sorted = all.labels;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> expect(20);
  std::iota(expect.begin(), expect.end(), 0);
  EXPECT_EQ(sorted, expect);
  const LabeledBatch some = b.sample_batch(8, 5);
  EXPECT_EQ(std::set<int>(some.labels.begin(), some.labels.end()).size(), 8u);
  for (std::size_t i = 0; i < some.size(); ++i) EXPECT_EQ(some.inputs.sample(i)[0], some.labels[i]);
  const LabeledBatch more = b.sample_batch(50, 5);
  EXPECT_EQ(more.size(), 50u);
}

TEST(ReplayBuffer, SamplingIsSeededAndPure) {
  ReplayBuffer b(30, 0);
  fill(b, 100);
  const ReplayBuffer before = b;
  EXPECT_EQ(b.sample_batch(10, 7).labels, b.sample_batch(10, 7).labels);
  EXPECT_NE(b.sample_batch(10, 7).labels, b.sample_batch(10, 8).labels);
  EXPECT_EQ(b, before);
}

TEST(ReplayBuffer, SampleBatchDrawsSlotsUniformly) {
  ReplayBuffer b(10, 0);
  fill(b, 10);
  std::vector<int> counts(10, 0);
  const int trials = 4000;
  for (int s = 0; s < trials; ++s) {
    for (int y : b.sample_batch(3, static_cast<std::uint64_t>(s)).labels) counts[static_cast<std::size_t>(y)]++;
  }
  const double mean = trials * 0.3;
  const double sigma = std::sqrt(trials * 0.3 * 0.7);
  for (int c : counts) EXPECT_LT(std::abs(c - mean), 3 * sigma);
}

// Every offered sample must survive with probability capacity / seen. The
// stream is cut into ten blocks of insertion order and each block's total
// retention over independent buffers is compared with its expectation.
TEST(ReplayBuffer, ReservoirRetentionIsUniformWithinThreeSigma) {
  const int n = 10000, capacity = 200, trials = 500, blocks = 10;
  std::vector<double> kept(blocks, 0.0);
  for (int trial = 0; trial < trials; ++trial) {
    ReplayBuffer b(capacity, static_cast<std::uint64_t>(trial));
    fill(b, n);
    for (int y : b.labels()) kept[static_cast<std::size_t>(y / (n / blocks))] += 1.0;
  }
  const double p = 1.0 / blocks;
  const double mean = static_cast<double>(trials) * capacity * p;
  const double sigma = std::sqrt(static_cast<double>(trials) * capacity * p * (1 - p));
  for (double k : kept) EXPECT_LT(std::abs(k - mean), 3 * sigma) << k;
}

TEST(ReplayBuffer, SaveLoadRoundTrip) {
  ReplayBuffer b(6, 9);
  LabeledBatch batch{testing::random_tensor({9, 3, 4, 4}, 2), {0, 1, 2, 3, 4, 5, 6, 7, 8}};
  b.insert_batch(batch);
  const auto path = std::filesystem::temp_directory_path() / "hcl_buffer_test.bin";
  b.save(path);
  const ReplayBuffer r = ReplayBuffer::load(path);
  EXPECT_EQ(r, b);
  // The restored generator state continues the same way.
  ReplayBuffer a = b, c = r;
  a.insert_batch(batch);
  c.insert_batch(batch);
  EXPECT_EQ(a, c);
  std::filesystem::remove(path);
  EXPECT_THROW(ReplayBuffer::load(path), IoError);
}

}  // namespace
}  // namespace hcl
