#include <benchmark/benchmark.h>

#include "msfa/autodiff.hpp"
#include "msfa/metrics.hpp"
#include "msfa/model.hpp"
#include "msfa/phantom.hpp"
#include "msfa/rng.hpp"
#include "msfa/train.hpp"

using namespace msfa;

static void BM_Conv3d(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto prec = state.range(1) ? ad::Precision::f32 : ad::Precision::f64;
  Rng rng(1);
  const Tensor x = uniform_tensor({4, n, n, n}, -1, 1, rng);
  const Tensor w = uniform_tensor({8, 4, 3, 3, 3}, -0.2, 0.2, rng);
  const Tensor b = uniform_tensor({8}, -0.1, 0.1, rng);
  for (auto _ : state) {
    ad::Graph g(nullptr, prec);
    auto y = ad::conv3d(g.constant(x), g.constant(w), g.constant(b));
    benchmark::DoNotOptimize(y.value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Conv3d)->Args({16, 0})->Args({16, 1})->Args({32, 0})->Args({32, 1})->Unit(benchmark::kMillisecond);

static void BM_Hd95(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  phantom::PhantomConfig c;
  c.depth = c.height = c.width = n;
  const double s = static_cast<double>(n) / 32.0;
  c.wt_radius = {7.0 * s, 11.0 * s};
  c.tc_radius = {4.0 * s, 7.0 * s};
  c.et_radius = {2.0 * s, 4.0 * s};
  c.center_jitter = 4.0 * s;
  auto a = train::targets(phantom::generate_case(c, 1, 0));
  auto b = train::targets(phantom::generate_case(c, 2, 0));
  for (auto _ : state) benchmark::DoNotOptimize(metrics::hd95(a.wt, b.wt));
}
BENCHMARK(BM_Hd95)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  phantom::PhantomConfig c;
  auto pc = phantom::generate_case(c, 3, 0);
  const std::vector<std::string> corpus{pc.text};
  semantic::Vocab vocab = semantic::Vocab::build(corpus);
  auto m = model::Model::create({}, model::Variant::full, vocab, 0);
  const auto gt = train::targets(pc);
  for (auto _ : state) {
    ad::Graph g(&m.params, ad::Precision::f32);
    auto fr = model::forward(g, m, pc.volume, pc.text, {});
    auto terms = loss::total_loss(fr.regions, gt, fr.f_spatial, {});
    auto grads = g.backward(terms.total);
    benchmark::DoNotOptimize(grads.data());
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
