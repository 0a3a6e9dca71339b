#include <gtest/gtest.h>

#include <filesystem>

#include "hcl/errors.hpp"
#include "hcl/model_zoo.hpp"
#include "testing.hpp"

namespace hcl {
namespace {

using testing::kKinkSafeStep;
using testing::max_fd_error;
using testing::random_tensor;
using testing::sample_coords;

const InputShape kInput{3, 16, 16};

double weighted_sum(const Tensor& logits, const Tensor& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += logits[i] * weights[i];
  return s;
}

TEST(ModelZoo, InstantiateIsDeterministicPerSeed) {
  const auto spec = make_spec("small_cnn", kInput);
  const auto a = instantiate(spec, 10, 0);
  const auto b = instantiate(spec, 10, 0);
  const auto c = instantiate(spec, 10, 1);
  EXPECT_EQ(a->flat_parameters(), b->flat_parameters());
  EXPECT_NE(a->flat_parameters(), c->flat_parameters());
}

TEST(ModelZoo, CapacityStrictlyIncreasesAcrossBuilders) {
  const auto small = instantiate(make_spec("small_cnn", kInput), 10, 0)->parameter_count();
  const auto wide = instantiate(make_spec("wide_cnn", kInput), 10, 0)->parameter_count();
  const auto residual = instantiate(make_spec("residual_cnn", kInput), 10, 0)->parameter_count();
  EXPECT_LT(small, wide);
  EXPECT_LT(wide, residual);
}

TEST(ModelZoo, UnknownBuilderAndTinyOutputAreConfigErrors) {
  EXPECT_THROW(make_spec("transformer_xl", kInput), ConfigError);
  EXPECT_THROW(parse_architecture("small_cnn:x", kInput), ConfigError);
  EXPECT_THROW(instantiate(make_spec("small_cnn", kInput), 1, 0), ConfigError);
}

TEST(ModelZoo, ArchitectureTextRoundTrips) {
  const auto spec = parse_architecture("residual_cnn:8:3", kInput);
  EXPECT_EQ(spec.width, 8u);
  EXPECT_EQ(spec.depth, 3u);
  EXPECT_TRUE(spec.has_running_stats);
  EXPECT_EQ(parse_architecture(spec.to_string(), kInput), spec);
  EXPECT_FALSE(parse_architecture("small_cnn", kInput).has_running_stats);
}

TEST(ModelZoo, EvalForwardIsDeterministicAndBatchIndependent) {
  auto model = instantiate(make_spec("residual_cnn", kInput), 10, 3);
  // Give the running statistics non-trivial values first.
  model->forward(random_tensor({8, 3, 16, 16}, 1));
  model->set_mode(Mode::eval);
  const Tensor x = random_tensor({5, 3, 16, 16}, 2);
  const Tensor batched = model->infer(x);
  EXPECT_EQ(batched, model->infer(x));
  for (std::size_t n = 0; n < 5; ++n) {
    const std::size_t idx[] = {n};
    const Tensor single = model->infer(x.gather(idx));
    for (std::size_t k = 0; k < 10; ++k) EXPECT_NEAR(single[k], batched[n * 10 + k], 1e-5);
  }
}

TEST(ModelZoo, ZeroHeadGivesZeroLogits) {
  auto model = instantiate(make_spec("wide_cnn", kInput), 10, 0);
  auto params = model->parameters();
  for (std::size_t i = model->head_parameter_index(); i < params.size(); ++i) params[i]->fill(0.0);
  model->set_mode(Mode::eval);
  const Tensor logits = model->infer(random_tensor({3, 3, 16, 16}, 5));
  for (double v : logits.values()) EXPECT_EQ(v, 0.0);
}

TEST(ModelZoo, ShapeMismatchIsShapeError) {
  auto model = instantiate(make_spec("small_cnn", kInput), 10, 0);
  model->set_mode(Mode::eval);
  EXPECT_THROW(model->infer(Tensor(Shape{2, 3, 8, 8})), ShapeError);
}

TEST(ModelZoo, InferRequiresEvalMode) {
  auto model = instantiate(make_spec("small_cnn", kInput), 10, 0);
  EXPECT_THROW(model->infer(random_tensor({1, 3, 16, 16}, 0)), ContractViolation);
}

// Gradient of a random linear functional of the logits w.r.t. input pixels.
void check_input_gradient(const std::string& builder, Mode mode) {
  auto model = instantiate(make_spec(builder, kInput), 10, 11);
  Tensor x = random_tensor({4, 3, 16, 16}, 12);
  const Tensor w = random_tensor({4, 10, 1, 1}, 13);
  ForwardTrace trace;
  model->forward_pure(x, mode, &trace);
  const Tensor g = model->backward(trace, w, nullptr);
  std::vector<double> flat(x.values().begin(), x.values().end());
  const std::vector<double> analytic(g.values().begin(), g.values().end());
  auto f = [&] {
    const Tensor probe(x.shape(), flat);
    return weighted_sum(model->forward_pure(probe, mode, nullptr), w);
  };
  EXPECT_LT(max_fd_error(flat, analytic, f, sample_coords(flat.size(), 40, 14), kKinkSafeStep), 1e-4) << builder;
}

TEST(ModelZoo, InputGradientsMatchFiniteDifferences) {
  for (const auto& id : builder_ids()) {
    check_input_gradient(id, Mode::eval);
    check_input_gradient(id, Mode::train);
  }
}

TEST(ModelZoo, ParameterGradientsMatchFiniteDifferences) {
  for (const auto& id : builder_ids()) {
    auto model = instantiate(make_spec(id, kInput), 10, 21);
    const Tensor x = random_tensor({4, 3, 16, 16}, 22);
    const Tensor w = random_tensor({4, 10, 1, 1}, 23);
    ForwardTrace trace;
    model->forward_pure(x, Mode::train, &trace);
    Gradients grads = model->make_gradients();
    model->backward(trace, w, &grads);
    std::vector<double> analytic;
    for (const auto& g : grads.values) analytic.insert(analytic.end(), g.values().begin(), g.values().end());
    std::vector<double> flat = model->flat_parameters();
    auto f = [&] {
      model->set_flat_parameters(flat);
      return weighted_sum(model->forward_pure(x, Mode::train, nullptr), w);
    };
    EXPECT_LT(max_fd_error(flat, analytic, f, sample_coords(flat.size(), 60, 24), kKinkSafeStep), 1e-4) << id;
  }
}

TEST(ModelZoo, FreshRunningStatsAreZeroMeanUnitVariance) {
  auto model = instantiate(make_spec("residual_cnn", kInput), 10, 0);
  const FeatureStats s = collect_running_stats(*model);
  EXPECT_EQ(s.layer_ids, model->tap_names());
  for (std::size_t l = 0; l < s.means.size(); ++l) {
    for (double m : s.means[l]) EXPECT_EQ(m, 0.0);
    for (double v : s.variances[l]) EXPECT_EQ(v, 1.0);
  }
}

TEST(ModelZoo, TrainForwardUpdatesRunningMeanWithMomentum) {
  auto model = instantiate(make_spec("wide_cnn", kInput), 10, 4);
  const Tensor x = random_tensor({6, 3, 16, 16}, 5);
  // Batch mean of the first convolution's output, computed independently.
  ForwardTrace trace;
  model->forward_pure(x, Mode::train, &trace);
  const Tensor& f = trace.taps[0];
  std::vector<double> expected(f.shape().c, 0.0);
  for (std::size_t n = 0; n < f.shape().n; ++n)
    for (std::size_t c = 0; c < f.shape().c; ++c)
      for (std::size_t i = 0; i < f.shape().h; ++i)
        for (std::size_t j = 0; j < f.shape().w; ++j) expected[c] += f.at(n, c, i, j);
  for (auto& e : expected) e /= static_cast<double>(f.shape().n * f.shape().h * f.shape().w);

  model->forward(x);
  const FeatureStats s = collect_running_stats(*model);
  for (std::size_t c = 0; c < expected.size(); ++c) {
    EXPECT_NEAR(s.means[0][c], 0.9 * 0.0 + 0.1 * expected[c], 1e-12);
  }
}

TEST(ModelZoo, EvalForwardNeverChangesRunningStats) {
  auto model = instantiate(make_spec("residual_cnn", kInput), 10, 4);
  model->forward(random_tensor({4, 3, 16, 16}, 1));
  model->set_mode(Mode::eval);
  const auto before = model->flat_norm_state();
  model->infer(random_tensor({4, 3, 16, 16}, 2));
  model->forward(random_tensor({4, 3, 16, 16}, 3));
  EXPECT_EQ(before, model->flat_norm_state());
}

TEST(ModelZoo, RunningStatsUnsupportedWithoutNormalization) {
  auto model = instantiate(make_spec("small_cnn", kInput), 10, 0);
  EXPECT_THROW(collect_running_stats(*model), UnsupportedArchitecture);
}

TEST(ModelZoo, ApproximateStatsOfZeroInputThroughBiasFreeConvAreZero) {
  auto model = instantiate(make_spec("wide_cnn", kInput), 10, 0);
  const FeatureStats s = approximate_feature_stats(*model, Tensor(Shape{3, 3, 16, 16}));
  for (double m : s.means[0]) EXPECT_EQ(m, 0.0);
  for (double v : s.variances[0]) EXPECT_EQ(v, 0.0);
}

TEST(ModelZoo, ApproximateStatsArePermutationInvariantAndPure) {
  auto model = instantiate(make_spec("small_cnn", kInput), 10, 0);
  const Tensor x = random_tensor({5, 3, 16, 16}, 9);
  const std::size_t perm[] = {3, 0, 4, 1, 2};
  const auto fp = model->fingerprint();
  const FeatureStats a = approximate_feature_stats(*model, x);
  const FeatureStats b = approximate_feature_stats(*model, x.gather(perm));
  EXPECT_EQ(fp, model->fingerprint());
  ASSERT_EQ(a.means.size(), b.means.size());
  for (std::size_t l = 0; l < a.means.size(); ++l) {
    for (std::size_t c = 0; c < a.means[l].size(); ++c) {
      EXPECT_NEAR(a.means[l][c], b.means[l][c], 1e-12);
      EXPECT_NEAR(a.variances[l][c], b.variances[l][c], 1e-12);
      EXPECT_GE(a.variances[l][c], 0.0);
    }
  }
}

TEST(ModelZoo, ApproximateStatsTrackRunningStatsAfterTraining) {
  // Train a BN model on blob images, let the running averages settle with
  // further train-mode passes, then compare with a large fresh batch.
  const Dataset& data = testing::tiny_blobs();
  auto model = instantiate(make_spec("wide_cnn", kInput), 10, 7);
  const std::size_t n = data.train_labels.size();
  Rng rng(3);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (int step = 0; step < 200; ++step) {
    std::vector<std::size_t> idx(32);
    for (auto& i : idx) i = pick(rng);
    model->forward(data.train_inputs.gather(idx));
  }
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  const FeatureStats running = collect_running_stats(*model);
  const FeatureStats approx = approximate_feature_stats(*model, data.train_inputs.gather(all));
  for (std::size_t l = 0; l < running.means.size(); ++l) {
    double diff = 0.0, norm = 0.0;
    for (std::size_t c = 0; c < running.means[l].size(); ++c) {
      diff += std::pow(approx.means[l][c] - running.means[l][c], 2) +
              std::pow(approx.variances[l][c] - running.variances[l][c], 2);
      norm += std::pow(running.means[l][c], 2) + std::pow(running.variances[l][c], 2);
    }
    EXPECT_LT(std::sqrt(diff / norm), 0.10) << running.layer_ids[l];
  }
}

TEST(ModelZoo, CheckpointReloadIsBitIdentical) {
  auto model = instantiate(make_spec("residual_cnn", kInput), 10, 8);
  model->forward(random_tensor({4, 3, 16, 16}, 1));
  model->set_mode(Mode::eval);
  const auto path = std::filesystem::temp_directory_path() / "hcl_ckpt_test.ckpt";
  save_checkpoint(*model, path);
  const auto loaded = load_checkpoint(path);
  const Tensor x = random_tensor({3, 3, 16, 16}, 2);
  EXPECT_EQ(model->infer(x), loaded->infer(x));
  EXPECT_EQ(model->fingerprint(), loaded->fingerprint());
  EXPECT_EQ(model->spec(), loaded->spec());
  std::filesystem::remove(path);
}

TEST(ModelZoo, CopiesAreCountedAsLiveModels) {
  const long base = Model::live_count();
  {
    auto a = instantiate(make_spec("small_cnn", kInput), 10, 0);
    Model b(*a);
    EXPECT_EQ(Model::live_count(), base + 2);
    EXPECT_EQ(a->flat_parameters(), b.flat_parameters());
  }
  EXPECT_EQ(Model::live_count(), base);
}

}  // namespace
}  // namespace hcl
