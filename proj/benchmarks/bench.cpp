#include <benchmark/benchmark.h>

#include <vector>

#include "capg/numerics.hpp"
#include "capg/objectness.hpp"
#include "capg/rng.hpp"
#include "capg/training.hpp"
#include "capg/vocabulary.hpp"

using namespace capg;

namespace {

Grid2D noise_grid(std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  Grid2D g(side, side, 0.0);
  for (double& v : g.data()) v = rng.uniform();
  return g;
}

void BM_IntegralImage(benchmark::State& state) {
  const Grid2D g = noise_grid(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(IntegralImage(g));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}
BENCHMARK(BM_IntegralImage)->Arg(112)->Arg(224);

void BM_RectMean(benchmark::State& state) {
  const IntegralImage ii(noise_grid(224, 2));
  const PixelRect r{10, 20, 150, 200};
  for (auto _ : state) benchmark::DoNotOptimize(ii.rect_mean(r));
}
BENCHMARK(BM_RectMean);

void BM_GaussianSmooth(benchmark::State& state) {
  const Grid2D g = noise_grid(112, 3);
  const auto k = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(gaussian_smooth(g, k));
}
BENCHMARK(BM_GaussianSmooth)->Arg(5)->Arg(8)->Arg(15);

void BM_BatchGradients(benchmark::State& state) {
  Rng rng(4);
  const std::size_t b = static_cast<std::size_t>(state.range(0)), grid = 14, dim = 32, vocab = 60;
  std::vector<TrainingSample> samples;
  for (std::size_t i = 0; i < b; ++i) {
    Grid3D f(grid, grid, dim, 0.0);
    for (double& v : f.data()) v = rng.normal();
    Caption c;
    for (int t = 0; t < 8; ++t) c.tokens.push_back(static_cast<int>(rng.index(vocab)));
    samples.push_back({std::move(f), std::move(c)});
  }
  std::vector<const TrainingSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  const TripletBatch batch(ptrs);
  const auto params = GroundingParams::random_uniform({vocab, dim, 50}, 5);
  const TrainConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(batch_gradients(batch, params, cfg));
}
BENCHMARK(BM_BatchGradients)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_ScoreProposals(benchmark::State& state) {
  const std::vector<ActivationMap> maps{ActivationMap(0, noise_grid(112, 6)),
                                        ActivationMap(1, noise_grid(112, 7))};
  const auto proposals = lattice_proposals(14, 2, 8);
  ScoringConfig cfg;
  cfg.criterion = static_cast<Criterion>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(score_proposals(maps, proposals, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(proposals.size()));
}
BENCHMARK(BM_ScoreProposals)
    ->Arg(static_cast<int>(Criterion::MinEdgeGradient))
    ->Arg(static_cast<int>(Criterion::AverageActivation))
    ->Arg(static_cast<int>(Criterion::InsideOutside));

void BM_Nms(benchmark::State& state) {
  Rng rng(8);
  std::vector<Box> boxes;
  for (int i = 0; i < state.range(0); ++i) {
    const double x = rng.uniform(0, 0.8), y = rng.uniform(0, 0.8);
    boxes.push_back(make_box(x, y, x + rng.uniform(0.05, 0.2), y + rng.uniform(0.05, 0.2), rng.uniform()));
  }
  for (auto _ : state) benchmark::DoNotOptimize(nms(boxes, 0.5));
}
BENCHMARK(BM_Nms)->Arg(100)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
