#include <benchmark/benchmark.h>

#include <random>

#include "hcl/distillation.hpp"
#include "hcl/inversion.hpp"
#include "hcl/model_zoo.hpp"
#include "hcl/replay.hpp"

namespace {

using namespace hcl;

Tensor noise(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(s);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

const char* kArch[] = {"small_cnn", "wide_cnn", "residual_cnn"};

void BM_Forward(benchmark::State& state) {
  auto model = instantiate(make_spec(kArch[state.range(0)], {3, 16, 16}), 10, 0);
  model->set_mode(Mode::eval);
  const Tensor x = noise({32, 3, 16, 16}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(model->infer(x));
  state.SetLabel(kArch[state.range(0)]);
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_Forward)->DenseRange(0, 2);

void BM_ForwardBackward(benchmark::State& state) {
  auto model = instantiate(make_spec(kArch[state.range(0)], {3, 16, 16}), 10, 0);
  const Tensor x = noise({32, 3, 16, 16}, 1);
  const Tensor upstream = noise({32, 10, 1, 1}, 2);
  Gradients g = model->make_gradients();
  for (auto _ : state) {
    ForwardTrace trace;
    model->forward_pure(x, Mode::train, &trace);
    g.zero();
    benchmark::DoNotOptimize(model->backward(trace, upstream, &g));
  }
  state.SetLabel(kArch[state.range(0)]);
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_ForwardBackward)->DenseRange(0, 2);

void BM_KdLossGrad(benchmark::State& state) {
  const Tensor s = noise({32, 10, 1, 1}, 3), t = noise({32, 10, 1, 1}, 4);
  const Matrix sm = to_matrix(s), tm = to_matrix(t);
  const KdLossOptions opt{2.0, KlDirection::student_to_teacher, KdDistance::kl, true};
  for (auto _ : state) benchmark::DoNotOptimize(kd_loss_grad(sm, tm, opt));
}
BENCHMARK(BM_KdLossGrad);

void BM_InversionStep(benchmark::State& state) {
  auto teacher = instantiate(make_spec("residual_cnn", {3, 16, 16}), 10, 0);
  teacher->set_mode(Mode::eval);
  const Tensor x = noise({32, 3, 16, 16}, 5);
  std::vector<int> targets(32);
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = static_cast<int>(i % 5);
  const FeatureStats stats = collect_running_stats(*teacher);
  const InversionConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(inversion_objective(*teacher, x, targets, &stats, cfg));
}
BENCHMARK(BM_InversionStep);

void BM_ReplayInsertSample(benchmark::State& state) {
  const Tensor x = noise({32, 3, 16, 16}, 6);
  LabeledBatch batch{x, std::vector<int>(32, 1)};
  for (auto _ : state) {
    ReplayBuffer buffer(200, 0);
    for (int i = 0; i < 20; ++i) buffer.insert_batch(batch);
    benchmark::DoNotOptimize(buffer.sample_batch(32, 1));
  }
}
BENCHMARK(BM_ReplayInsertSample);

}  // namespace

BENCHMARK_MAIN();
