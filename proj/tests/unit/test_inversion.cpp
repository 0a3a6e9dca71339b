#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "hcl/errors.hpp"
#include "hcl/inversion.hpp"
#include "testing.hpp"

namespace hcl {
namespace {

using testing::max_fd_error;
using testing::random_tensor;
using testing::sample_coords;

std::vector<double> flat(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

TEST(TvLoss, Examples) {
  EXPECT_EQ(tv_loss(Tensor(Shape{1, 1, 3, 3}, 2.5)), 0.0);
  // 2x3 single-channel image with a step of d per column.
  const double d = 0.7;
  Tensor ramp(Shape{1, 1, 2, 3});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) ramp.at(0, 0, i, j) = d * static_cast<double>(j);
  EXPECT_NEAR(tv_loss(ramp), d * d, 1e-15);
  Tensor shifted = random_tensor({2, 3, 4, 4}, 1);
  const double base = tv_loss(shifted);
  for (auto& v : shifted.values()) v += 3.0;
  EXPECT_NEAR(tv_loss(shifted), base, 1e-12);
}

TEST(L2Loss, Examples) {
  EXPECT_EQ(l2_loss(Tensor(Shape{1, 1, 2, 2})), 0.0);
  EXPECT_EQ(l2_loss(Tensor(Shape{1, 1, 2, 2}, 1.0)), 1.0);
  Tensor x = random_tensor({2, 3, 4, 4}, 2);
  const double base = l2_loss(x);
  x *= 3.0;
  EXPECT_NEAR(l2_loss(x), 9.0 * base, 1e-12);
}

TEST(PriorLosses, GradientsMatchFiniteDifferences) {
  Tensor x = random_tensor({2, 3, 4, 4}, 3);
  std::vector<double> v = flat(x);
  auto all = sample_coords(v.size(), v.size(), 0);
  EXPECT_LT(max_fd_error(v, flat(tv_loss_grad(x)), [&] { return tv_loss(Tensor(x.shape(), v)); }, all), 1e-4);
  EXPECT_LT(max_fd_error(v, flat(l2_loss_grad(x)), [&] { return l2_loss(Tensor(x.shape(), v)); }, all), 1e-4);
}

std::unique_ptr<Model> teacher(const std::string& id, std::size_t out = 4, InputShape in = {3, 4, 4}) {
  auto m = instantiate(make_spec(id, in), out, 5);
  m->set_mode(Mode::eval);
  return m;
}

TEST(FeatureStatLoss, ZeroWhenStatsMatch) {
  auto t = teacher("wide_cnn");
  const Tensor x = random_tensor({4, 3, 4, 4}, 1);
  EXPECT_NEAR(feature_stat_loss(*t, x, approximate_feature_stats(*t, x)), 0.0, 1e-20);
}

TEST(FeatureStatLoss, SingleLayerHandExample) {
  // A single 1x1 convolution with two output channels, weights 0 and bias 1:
  // every feature equals 1, so the batch mean is [1, 1] and the variance 0.
  auto t = teacher("linear_conv");
  auto params = t->parameters();
  params[0]->fill(0.0);
  params[1]->fill(1.0);
  const Tensor x = random_tensor({3, 3, 4, 4}, 2);
  FeatureStats target;
  target.layer_ids = t->tap_names();
  target.means = {{0.0, 0.0}};
  target.variances = {{0.0, 0.0}};
  EXPECT_NEAR(feature_stat_loss(*t, x, target), 1.0, 1e-12);
}

TEST(FeatureStatLoss, PermutationInvariantAndRejectsMisalignment) {
  auto t = teacher("residual_cnn");
  const Tensor x = random_tensor({4, 3, 4, 4}, 3);
  const FeatureStats target = collect_running_stats(*t);
  const std::size_t perm[] = {2, 0, 3, 1};
  EXPECT_NEAR(feature_stat_loss(*t, x, target), feature_stat_loss(*t, x.gather(perm), target), 1e-12);
  FeatureStats bad = target;
  bad.layer_ids.pop_back();
  EXPECT_THROW(feature_stat_loss(*t, x, bad), ContractViolation);
  bad = target;
  std::swap(bad.layer_ids.front(), bad.layer_ids.back());
  EXPECT_THROW(feature_stat_loss(*t, x, bad), ContractViolation);
}

TEST(InversionObjective, InputGradientMatchesFiniteDifferences) {
  for (const std::string id : {"wide_cnn", "residual_cnn", "small_cnn"}) {
    const InputShape in = id == "small_cnn" ? InputShape{3, 8, 8} : InputShape{3, 4, 4};
    auto t = teacher(id, 4, in);
    Tensor x = random_tensor({2, 3, in.height, in.width}, 4);
    const std::vector<int> targets{1, 3};
    FeatureStats stats = approximate_feature_stats(*t, random_tensor({6, 3, in.height, in.width}, 5));
    InversionConfig cfg;
    cfg.alpha_tv = 0.3;
    cfg.alpha_l2 = 0.2;
    cfg.alpha_feature = 0.7;
    const InversionLoss loss = inversion_objective(*t, x, targets, &stats, cfg);
    std::vector<double> v = flat(x);
    auto f = [&] { return inversion_objective(*t, Tensor(x.shape(), v), targets, &stats, cfg).total; };
    EXPECT_LT(max_fd_error(v, flat(loss.input_grad), f, sample_coords(v.size(), v.size(), 0)), 1e-4) << id;
  }
}

TEST(PriorTargets, EvenAcrossPriorTasks) {
  const TaskStream s = build_split_stream(testing::tiny_blobs(), 3, 2, 0);
  const auto targets = sample_prior_targets(s, 3, 8, 11);
  int from1 = 0, from2 = 0;
  for (int y : targets) {
    const auto& c1 = s.task(1).class_ids;
    const auto& c2 = s.task(2).class_ids;
    if (std::find(c1.begin(), c1.end(), y) != c1.end()) ++from1;
    else if (std::find(c2.begin(), c2.end(), y) != c2.end()) ++from2;
  }
  EXPECT_EQ(from1, 4);
  EXPECT_EQ(from2, 4);
  for (int y : sample_prior_targets(s, 2, 5, 3)) {
    const auto& c1 = s.task(1).class_ids;
    EXPECT_NE(std::find(c1.begin(), c1.end(), y), c1.end());
  }
  EXPECT_THROW(sample_prior_targets(s, 1, 4, 0), ContractViolation);
}

TEST(PriorTargets, OddBatchCountsDifferByAtMostOne) {
  const TaskStream s = build_split_stream(testing::tiny_blobs(), 4, 2, 0);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::map<int, int> per_task;
    for (int y : sample_prior_targets(s, 4, 7, seed)) per_task[y / 2]++;
    int lo = 100, hi = 0;
    for (int t = 0; t < 3; ++t) {
      lo = std::min(lo, per_task[t]);
      hi = std::max(hi, per_task[t]);
    }
    EXPECT_LE(hi - lo, 1);
  }
}

TEST(PriorTargets, HistogramIsUniformOverPriorTasks) {
  // One label per draw, 10 000 draws over three prior tasks.
  const TaskStream s = build_split_stream(testing::tiny_blobs(), 4, 2, 0);
  std::vector<int> counts(3, 0);
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const int y = sample_prior_targets(s, 4, 1, seed).front();
    for (int t = 1; t <= 3; ++t) {
      const auto& c = s.task(t).class_ids;
      if (std::find(c.begin(), c.end(), y) != c.end()) counts[static_cast<std::size_t>(t - 1)]++;
    }
  }
  const double mean = 10000.0 / 3.0;
  const double sigma = std::sqrt(10000.0 * (1.0 / 3.0) * (2.0 / 3.0));
  for (int c : counts) EXPECT_LT(std::abs(c - mean), 3 * sigma);
}

TEST(Synthesize, KZeroReturnsTheCurrentBatch) {
  const TaskStream s = build_split_stream(testing::tiny_blobs(), 2, 2, 0);
  auto t = teacher("residual_cnn", 4, {3, 16, 16});
  const Tensor current = random_tensor({5, 3, 16, 16}, 7);
  InversionConfig cfg;
  cfg.k = 0;
  SynthesisRequest req;
  req.current_batch = &current;
  const SyntheticBatch out = synthesize(*t, req, s, 2, cfg, 1);
  EXPECT_EQ(out.inputs, current);
  EXPECT_EQ(out.steps_used, 0u);
  EXPECT_TRUE(out.loss_trace.empty());
}

TEST(Synthesize, GaussianInitIsSeeded) {
  const TaskStream s = build_split_stream(testing::tiny_blobs(), 2, 2, 0);
  auto t = teacher("small_cnn", 4, {3, 16, 16});
  InversionConfig cfg;
  cfg.k = 0;
  cfg.init_mode = InitMode::gaussian;
  SynthesisRequest req;
  req.batch_size = 6;
  const SyntheticBatch a = synthesize(*t, req, s, 2, cfg, 1);
  const SyntheticBatch b = synthesize(*t, req, s, 2, cfg, 1);
  const SyntheticBatch c = synthesize(*t, req, s, 2, cfg, 2);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_FALSE(a.inputs == c.inputs);
  EXPECT_EQ(a.inputs.shape(), (Shape{6, 3, 16, 16}));
  double mean = 0, sq = 0;
  for (double v : a.inputs.values()) {
    mean += v;
    sq += v * v;
  }
  mean /= static_cast<double>(a.inputs.size());
  EXPECT_NEAR(mean, 0.0, 0.1);
  EXPECT_NEAR(sq / static_cast<double>(a.inputs.size()), 1.0, 0.1);
}

TEST(Synthesize, MissingCurrentBatchIsConfigError) {
  const TaskStream s = build_split_stream(testing::tiny_blobs(), 2, 2, 0);
  auto t = teacher("small_cnn", 4, {3, 16, 16});
  EXPECT_THROW(synthesize(*t, SynthesisRequest{}, s, 2, InversionConfig{}, 0), ConfigError);
}

TEST(Synthesize, NoGradientPathIsInternalError) {
  const TaskStream s = build_split_stream(testing::tiny_blobs(), 2, 2, 0);
  auto t = teacher("linear_conv", 4, {3, 16, 16});
  for (auto* p : t->parameters()) p->fill(0.0);
  const Tensor current = random_tensor({2, 3, 16, 16}, 1);
  SynthesisRequest req;
  req.current_batch = &current;
  InversionConfig cfg;
  cfg.k = 3;
  cfg.alpha_tv = 0;
  cfg.alpha_feature = 0;
  EXPECT_THROW(synthesize(*t, req, s, 2, cfg, 0), InternalError);
}

TEST(Synthesize, TeacherIsUnchangedAndTraceHasOneEntryPerStep) {
  const TaskStream s = build_split_stream(testing::tiny_blobs(), 2, 2, 0);
  auto t = teacher("residual_cnn", 4, {3, 16, 16});
  const auto before = t->fingerprint();
  const Tensor current = random_tensor({4, 3, 16, 16}, 3);
  SynthesisRequest req;
  req.current_batch = &current;
  InversionConfig cfg;
  cfg.k = 6;
  const SyntheticBatch out = synthesize(*t, req, s, 2, cfg, 0);
  EXPECT_EQ(before, t->fingerprint());
  EXPECT_EQ(out.loss_trace.size(), out.steps_used);
  EXPECT_EQ(out.targets.size(), 4u);
  for (int y : out.targets) EXPECT_TRUE(y == s.task(1).class_ids[0] || y == s.task(1).class_ids[1]);
  EXPECT_EQ(out.teacher_logits.rows(), 4);
}

TEST(Synthesize, ClampKeepsPixelsInRange) {
  const TaskStream s = build_split_stream(testing::tiny_blobs(), 2, 2, 0);
  auto t = teacher("small_cnn", 4, {3, 16, 16});
  const Tensor current = random_tensor({4, 3, 16, 16}, 3, 5.0);
  const PixelRange range = PixelRange::from(testing::tiny_blobs().descriptor);
  SynthesisRequest req;
  req.current_batch = &current;
  req.clamp = &range;
  InversionConfig cfg;
  cfg.k = 2;
  const SyntheticBatch out = synthesize(*t, req, s, 2, cfg, 0);
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 16; ++j) {
          EXPECT_GE(out.inputs.at(n, c, i, j), range.lower[c]);
          EXPECT_LE(out.inputs.at(n, c, i, j), range.upper[c]);
        }
}

TEST(InversionConfigValidation, RejectsBadValues) {
  InversionConfig c;
  c.alpha_tv = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = InversionConfig{};
  c.lr = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.k = 0;
  EXPECT_NO_THROW(c.validate());
  EXPECT_THROW(parse_init_mode("uniform"), ConfigError);
}

TEST(SyntheticCache, RoundTripsAndKeysDiffer) {
  SyntheticBatch b;
  b.inputs = random_tensor({2, 3, 4, 4}, 1);
  b.targets = {1, 0};
  b.steps_used = 3;
  b.loss_trace = {3.0, 2.0, 1.0};
  b.teacher_logits = testing::random_matrix(2, 4, 2);
  const auto path = std::filesystem::temp_directory_path() / "hcl_synth_test.bin";
  save_synthetic(b, path);
  const SyntheticBatch r = load_synthetic(path);
  EXPECT_EQ(r.inputs, b.inputs);
  EXPECT_EQ(r.targets, b.targets);
  EXPECT_EQ(r.loss_trace, b.loss_trace);
  EXPECT_EQ(r.teacher_logits, b.teacher_logits);
  std::filesystem::remove(path);

  InversionConfig a, c;
  c.alpha_tv = 0.002;
  EXPECT_NE(synthesis_cache_key(2, 0, a, 0), synthesis_cache_key(2, 0, c, 0));
  EXPECT_NE(synthesis_cache_key(2, 0, a, 0), synthesis_cache_key(3, 0, a, 0));
  EXPECT_NE(synthesis_cache_key(2, 0, a, 0), synthesis_cache_key(2, 1, a, 0));
}

TEST(ImageGrid, WritesAPortablePixmap) {
  const auto path = std::filesystem::temp_directory_path() / "hcl_grid_test.ppm";
  write_image_grid(random_tensor({5, 3, 16, 16}, 1), testing::tiny_blobs().descriptor, path);
  std::ifstream is(path, std::ios::binary);
  std::string magic;
  std::size_t w = 0, h = 0;
  is >> magic >> w >> h;
  EXPECT_EQ(magic, "P6");
  EXPECT_EQ(w, 3u * 17 + 1);
  EXPECT_EQ(h, 2u * 17 + 1);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace hcl
