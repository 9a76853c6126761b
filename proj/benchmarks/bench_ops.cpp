#include <benchmark/benchmark.h>

#include <random>

#include "fkd/ops.hpp"
#include "fkd/rng.hpp"
#include "fkd/tensor.hpp"

namespace {

fkd::Tensor random_tensor(fkd::Shape shape, std::mt19937_64& rng,
                          bool rg = false) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> data(static_cast<size_t>(fkd::shape_numel(shape)));
  for (auto& v : data) v = dist(rng);
  return fkd::Tensor::from(std::move(shape), std::move(data), rg);
}

void BM_Conv2dForward(benchmark::State& state) {
  auto rng = fkd::make_rng(1, fkd::RngStream::kTest);
  const int c = static_cast<int>(state.range(0));
  fkd::Tensor x = random_tensor({8, c, 32, 32}, rng);
  fkd::Tensor k = random_tensor({c, c, 3, 3}, rng);
  fkd::Tensor b = fkd::Tensor::zeros({c});
  for (auto _ : state) {
    benchmark::DoNotOptimize(fkd::conv2d(x, k, b, 1, 1).data().data());
  }
}
BENCHMARK(BM_Conv2dForward)->Arg(4)->Arg(8)->Arg(16);

void BM_Conv2dTrainStep(benchmark::State& state) {
  auto rng = fkd::make_rng(2, fkd::RngStream::kTest);
  fkd::Tensor x = random_tensor({8, 8, 32, 32}, rng);
  fkd::Tensor k = random_tensor({8, 8, 3, 3}, rng, true);
  fkd::Tensor b = fkd::Tensor::zeros({8}, true);
  for (auto _ : state) {
    k.zero_grad();
    b.zero_grad();
    fkd::Tensor loss = fkd::sum(fkd::relu(fkd::conv2d(x, k, b, 1, 1)));
    loss.backward();
    benchmark::DoNotOptimize(k.grad().data());
  }
}
BENCHMARK(BM_Conv2dTrainStep);

void BM_TransposedConv2d(benchmark::State& state) {
  auto rng = fkd::make_rng(3, fkd::RngStream::kTest);
  fkd::Tensor x = random_tensor({8, 8, 16, 16}, rng);
  fkd::Tensor k = random_tensor({8, 8, 4, 4}, rng);
  fkd::Tensor b = fkd::Tensor::zeros({8});
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        fkd::transposed_conv2d(x, k, b, 2, 1).data().data());
  }
}
BENCHMARK(BM_TransposedConv2d);

}  // namespace

BENCHMARK_MAIN();
