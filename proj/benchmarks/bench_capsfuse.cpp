#include <benchmark/benchmark.h>

#include <random>

#include "capsfuse/capsule.hpp"
#include "capsfuse/metrics.hpp"
#include "capsfuse/model.hpp"
#include "capsfuse/synthetic.hpp"
#include "capsfuse/training.hpp"

using namespace capsfuse;

namespace {

Tensor gaussian(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = n(rng);
  return t;
}

const MultimodalDataset& dataset() {
  static const MultimodalDataset ds = [] {
    SynthSpec s;
    s.n = 512;
    s.seed = 3;
    return gen_synthetic(s);
  }();
  return ds;
}

std::vector<std::size_t> first_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

}  // namespace

static void BM_Routing(benchmark::State& state) {
  const auto iters = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  auto primary = PrimaryCapsuleLayer::create("p", 8, 32, 8, true, rng);
  auto digit = DigitCapsuleLayer::create("d", 8, 2, 8, 16, iters, rng);
  const auto e = gaussian({32, 32}, rng);
  for (auto _ : state) {
    ad::Tape tape;
    auto r = route(digit, project_primary(primary, tape.constant(e)));
    benchmark::DoNotOptimize(r.digits.value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_Routing)->Arg(1)->Arg(3)->Arg(5);

static void BM_ForwardBackward(benchmark::State& state) {
  const auto strategy = static_cast<FusionStrategy>(state.range(0));
  ModelConfig cfg;
  cfg.strategy = strategy;
  cfg.inputs = dataset().input_dims();
  auto model = make_model(cfg, 1);
  const auto batch = dataset().batch(first_indices(32));
  const std::vector<double> w{1.0, 1.0};
  for (auto _ : state) {
    ad::Tape tape;
    auto loss = weighted_cross_entropy(model->forward(tape, batch), batch.labels, w);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.value().item());
  }
  state.SetLabel(std::string(to_string(strategy)));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_ForwardBackward)->DenseRange(0, 3);

static void BM_RocAuc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> s(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = u(rng);
    y[i] = u(rng) < 0.14 ? 1 : 0;
  }
  y[0] = 1;
  y[1] = 0;
  for (auto _ : state) benchmark::DoNotOptimize(metrics::roc_auc(s, y));
  state.SetComplexityN(static_cast<benchmark::IterationCount>(n));
}
BENCHMARK(BM_RocAuc)->RangeMultiplier(8)->Range(64, 1 << 18)->Complexity(benchmark::oNLogN);

static void BM_PartialAuc(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> s(10000);
  std::vector<int> y(10000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = u(rng);
    y[i] = u(rng) < 0.14 ? 1 : 0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::partial_auc(s, y, 0.1).standardized);
}
BENCHMARK(BM_PartialAuc);
BENCHMARK_MAIN();
