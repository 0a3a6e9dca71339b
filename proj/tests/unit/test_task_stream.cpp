#include <gtest/gtest.h>

#include <filesystem>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include "hcl/errors.hpp"
#include "hcl/task_stream.hpp"
#include "testing.hpp"

namespace hcl {
namespace {

const Dataset& data() { return testing::tiny_blobs(); }

TEST(TaskStream, FiveTwoClassTasksPartitionTheLabels) {
  const TaskStream s = build_split_stream(data(), 5, 2, 0);
  ASSERT_EQ(s.num_tasks(), 5u);
  EXPECT_EQ(s.total_classes, 10u);
  std::set<int> seen;
  std::size_t total = 0;
  for (const auto& t : s.tasks) {
    EXPECT_EQ(t.class_ids.size(), 2u);
    for (int c : t.class_ids) seen.insert(c);
    total += t.class_ids.size();
  }
  EXPECT_EQ(total, 10u);
  EXPECT_EQ(seen.size(), 10u);
  EXPECT_EQ(*seen.begin(), 0);
  EXPECT_EQ(*seen.rbegin(), 9);
}

TEST(TaskStream, SingleTaskCoversAllClasses) {
  const TaskStream s = build_split_stream(data(), 1, 10, 0);
  ASSERT_EQ(s.num_tasks(), 1u);
  EXPECT_EQ(s.task(1).class_ids.size(), 10u);
}

TEST(TaskStream, SameSeedGivesSameStream) {
  const TaskStream a = build_split_stream(data(), 5, 2, 7);
  const TaskStream b = build_split_stream(data(), 5, 2, 7);
  EXPECT_EQ(a.source_classes, b.source_classes);
  for (int t = 1; t <= 5; ++t) {
    EXPECT_EQ(a.task(t).class_ids, b.task(t).class_ids);
    EXPECT_EQ(a.task(t).train_indices, b.task(t).train_indices);
    EXPECT_EQ(a.task(t).val_indices, b.task(t).val_indices);
    EXPECT_EQ(a.task(t).test_indices, b.task(t).test_indices);
  }
  const TaskStream c = build_split_stream(data(), 5, 2, 8);
  EXPECT_NE(a.source_classes, c.source_classes);
}

TEST(TaskStream, SplitsAreDisjointAndLabelsBelongToTheTask) {
  const TaskStream s = build_split_stream(data(), 5, 2, 3);
  for (int t = 1; t <= 5; ++t) {
    const TaskSpec& task = s.task(t);
    EXPECT_GE(task.n_val, 1u);
    EXPECT_EQ(task.n_train, task.train_indices.size());
    std::set<std::size_t> train(task.train_indices.begin(), task.train_indices.end());
    for (std::size_t v : task.val_indices) EXPECT_EQ(train.count(v), 0u);
    const std::size_t expected_val =
        static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(task.n_train + task.n_val)));
    EXPECT_NEAR(static_cast<double>(task.n_val), static_cast<double>(expected_val), 1.0);
    for (Split split : {Split::train, Split::val, Split::test}) {
      const auto& idx = split == Split::train ? task.train_indices
                        : split == Split::val ? task.val_indices
                                              : task.test_indices;
      const LabeledBatch b = gather_batch(data(), s, split, idx);
      for (int label : b.labels) {
        EXPECT_NE(std::find(task.class_ids.begin(), task.class_ids.end(), label), task.class_ids.end());
      }
    }
  }
}

TEST(TaskStream, ErrorsForBadRequests) {
  EXPECT_THROW(build_split_stream(data(), 6, 2, 0), ConfigError);
  DataOptions opts;
  EXPECT_THROW(build_split_stream("imagenet", 2, 2, 0, opts), ConfigError);
  const TaskStream s = build_split_stream(data(), 2, 2, 0);
  EXPECT_THROW(s.task(0), ContractViolation);
  EXPECT_THROW(s.task(3), ContractViolation);
}

TEST(TaskStream, PriorClassesAreTheEarlierTasks) {
  const TaskStream s = build_split_stream(data(), 3, 2, 0);
  EXPECT_TRUE(s.prior_classes(1).empty());
  auto prior = s.prior_classes(3);
  std::vector<int> expected = s.task(1).class_ids;
  expected.insert(expected.end(), s.task(2).class_ids.begin(), s.task(2).class_ids.end());
  EXPECT_EQ(prior, expected);
}

LabeledBatch random_batch(std::uint64_t seed) {
  LabeledBatch b;
  b.inputs = testing::random_tensor({4, 3, 16, 16}, seed);
  b.labels = {0, 1, 2, 3};
  return b;
}

TEST(Augment, NoneIsIdentity) {
  const LabeledBatch b = random_batch(1);
  const LabeledBatch out = augment(b, AugmentPolicy::none, 99);
  EXPECT_EQ(out.inputs, b.inputs);
  EXPECT_EQ(out.labels, b.labels);
}

TEST(Augment, CropFlipIsAPureFunctionOfTheSeed) {
  const LabeledBatch b = random_batch(2);
  const LabeledBatch x = augment(b, AugmentPolicy::crop_flip, 3);
  const LabeledBatch y = augment(b, AugmentPolicy::crop_flip, 3);
  EXPECT_EQ(x.inputs, y.inputs);
  EXPECT_EQ(x.labels, b.labels);
  EXPECT_EQ(x.inputs.shape(), b.inputs.shape());
}

TEST(Augment, DifferentSeedsGiveDifferentViews) {
  int differing = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const LabeledBatch b = random_batch(100 + i);
    if (!(augment(b, AugmentPolicy::crop_flip, 3).inputs == augment(b, AugmentPolicy::crop_flip, 4).inputs)) {
      ++differing;
    }
  }
  EXPECT_GE(differing, 99);
}

TEST(Augment, UnknownPolicyIsConfigError) {
  EXPECT_THROW(parse_augment_policy("mixup"), ConfigError);
  EXPECT_EQ(parse_augment_policy("crop_flip"), AugmentPolicy::crop_flip);
}

TEST(StreamDescriptor, RoundTripsAndDetectsTampering) {
  const TaskStream s = build_split_stream(data(), 5, 2, 4);
  const auto path = std::filesystem::temp_directory_path() / "hcl_stream_test.txt";
  write_stream_descriptor(s, data().descriptor, path);
  const TaskStream r = read_stream_descriptor(path, data());
  EXPECT_EQ(r.source_classes, s.source_classes);
  for (int t = 1; t <= 5; ++t) EXPECT_EQ(r.task(t).train_indices, s.task(t).train_indices);

  std::string text;
  {
    std::ifstream is(path);
    text.assign(std::istreambuf_iterator<char>(is), {});
  }
  const auto pos = text.find("seed = 4");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 8, "seed = 5");
  std::ofstream(path) << text;
  EXPECT_THROW(read_stream_descriptor(path, data()), IoError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace hcl
