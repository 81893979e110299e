#include <random>

#include <ATen/ATen.h>
#include <ATen/Parallel.h>
#include <benchmark/benchmark.h>
#include <torch/csrc/autograd/autograd.h>

#include "ostk/blending.hpp"
#include "ostk/network.hpp"
#include "ostk/styletransfer.hpp"

namespace {

using namespace ostk;

Image noise_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  Image img(h, w);
  for (auto& v : img.pixels()) v = d(rng);
  return img;
}

Mask noise_mask(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution d(0.5);
  Mask m(h, w);
  for (auto& v : m.values) v = d(rng) ? 1.0f : 0.0f;
  return m;
}

const BackboneModel& model() {
  static const BackboneModel m = [] {
    at::set_num_threads(1);
    return load_model(OSTK_BENCH_WEIGHTS);
  }();
  return m;
}

void BM_Gram(benchmark::State& state) {
  const auto c = state.range(0), side = state.range(1);
  FeatureMap f{0, at::randn({c, side, side}), false};
  for (auto _ : state) benchmark::DoNotOptimize(gram(f).values);
  state.SetItemsProcessed(state.iterations() * c * c * side * side);
}
BENCHMARK(BM_Gram)->Args({32, 80})->Args({64, 40})->Args({128, 20})->Args({256, 10});

void BM_StyleLossBackward(benchmark::State& state) {
  const auto side = state.range(0);
  FeatureSet pastiche;
  std::map<int, GramMatrix> targets;
  std::map<int, double> weights;
  std::vector<at::Tensor> leaves;
  int layer = 0;
  for (std::int64_t c : {32, 64, 128, 256}) {
    const auto s = side >> layer;
    auto p = at::randn({c, s, s}).requires_grad_(true);
    leaves.push_back(p);
    pastiche.emplace(layer, FeatureMap{layer, p, true});
    targets[layer] = gram(FeatureMap{layer, at::randn({c, s, s}), false});
    weights[layer] = 0.25;
    ++layer;
  }
  for (auto _ : state) {
    const auto loss = style_loss(pastiche, targets, weights);
    benchmark::DoNotOptimize(torch::autograd::grad({loss}, leaves));
  }
}
BENCHMARK(BM_StyleLossBackward)->Arg(80)->Arg(160);

void BM_Composite(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const auto o = noise_image(side, side, 1), s = noise_image(side, side, 2);
  const auto m = noise_mask(side, side, 3);
  for (auto _ : state) benchmark::DoNotOptimize(composite(o, s, m));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_Composite)->Arg(256)->Arg(640);

void BM_Feather(benchmark::State& state) {
  const int radius = static_cast<int>(state.range(0));
  const auto m = binarize(noise_mask(640, 640, 4));
  for (auto _ : state) benchmark::DoNotOptimize(feather(m, radius));
}
BENCHMARK(BM_Feather)->Arg(2)->Arg(8);

void BM_ExtractFeatures(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const auto img = noise_image(side, side, 5);
  const auto& net = model();
  for (auto _ : state) benchmark::DoNotOptimize(extract_features(net, img, false));
}
BENCHMARK(BM_ExtractFeatures)->Arg(256)->Arg(640)->Unit(benchmark::kMillisecond);

void BM_StylizeStep(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const auto content = noise_image(side, side, 6), style = noise_image(side, side, 7);
  StyleTransferConfig cfg;
  const auto targets = prepare_targets(model(), content, style, cfg);
  auto x = image_to_tensor(content).requires_grad_(true);
  for (auto _ : state) {
    const auto terms = evaluate_losses(model(), x, targets, cfg);
    benchmark::DoNotOptimize(torch::autograd::grad({terms.total}, {x}));
  }
}
BENCHMARK(BM_StylizeStep)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Segment(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const auto img = noise_image(side, side, 8);
  for (auto _ : state) benchmark::DoNotOptimize(model().segment(img, 0.5f));
}
BENCHMARK(BM_Segment)->Arg(320)->Arg(640)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
