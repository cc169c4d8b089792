#include <benchmark/benchmark.h>

#include <random>

#include "fairlatent/flow.hpp"
#include "fairlatent/losses.hpp"
#include "fairlatent/trainer.hpp"

namespace fl = fairlatent;

namespace {

fl::Tensor gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  fl::Tensor t = fl::Tensor::zeros({rows, cols});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal(rng);
  return t;
}

fl::FlowModel small_model(std::size_t d, const fl::Tensor& e) {
  fl::FlowModel m(fl::FlowConfig::small(d, 1), fl::LatentPartition::halves(d));
  fl::init_actnorm(m, e);
  return m;
}

void BM_FlowForward(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const fl::Tensor e = gaussian(256, d, 1);
  const fl::FlowModel m = small_model(d, e);
  for (auto _ : state) benchmark::DoNotOptimize(fl::forward(m, e).z);
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_FlowForward)->Arg(16)->Arg(64);

void BM_FlowInverse(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const fl::Tensor e = gaussian(256, d, 2);
  const fl::FlowModel m = small_model(d, e);
  const fl::Tensor z = fl::forward(m, e).z;
  for (auto _ : state) benchmark::DoNotOptimize(fl::inverse(m, z));
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_FlowInverse)->Arg(16)->Arg(64);

void BM_TotalLossBackward(benchmark::State& state) {
  const std::size_t d = 16, n = 32;
  const fl::Tensor e = gaussian(n, d, 3);
  const fl::FlowModel m = small_model(d, e);
  std::mt19937_64 rng(4);
  const auto py = fl::LinearProbe::random(d / 2, 2, rng);
  const auto ps = fl::LinearProbe::random(d / 2, 2, rng);
  fl::BatchAnnotations ann;
  for (std::size_t i = 0; i < n; ++i) {
    ann.y.push_back(static_cast<int>(i % 2));
    ann.s.push_back(static_cast<int>(i / 2 % 2));
  }
  for (auto _ : state) {
    fl::ad::Graph g;
    fl::BoundFlow flow(m, g, true);
    const auto out = flow.forward(g.constant(e));
    const fl::losses::ProbeVars vy{g.variable(py.weight), g.variable(py.bias)};
    const fl::losses::ProbeVars vs{g.variable(ps.weight), g.variable(ps.bias)};
    const auto terms = fl::losses::total_loss(out.z, out.logdet, m.partition(), vy, vs, ann, fl::FairLossConfig{},
                                              fl::AblationFlags::full());
    g.backward(terms.total);
    benchmark::DoNotOptimize(g.grad(vy.weight));
  }
}
BENCHMARK(BM_TotalLossBackward);

void BM_TrainEpoch(benchmark::State& state) {
  fl::SynthConfig sc;
  sc.n = 512;
  const fl::EmbeddingDataset data = fl::generate_synthetic(sc);
  fl::TrainConfig cfg = fl::TrainConfig::small_profile();
  for (auto _ : state) {
    fl::TrainState st = fl::init_training(data, cfg);
    benchmark::DoNotOptimize(fl::run_epochs(st, data, 1));
  }
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
