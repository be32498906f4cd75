#include <benchmark/benchmark.h>

#include "dsinit/initializers.hpp"
#include "dsinit/nn.hpp"
#include "dsinit/numerics.hpp"

using namespace dsinit;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

nn::Network mnist_net(Rng& rng) {
  nn::Network net(nn::NetworkSpec({nn::LayerSpec::conv2d(8, 3), nn::LayerSpec::relu(), nn::LayerSpec::maxpool2x2(),
                                   nn::LayerSpec::flatten(), nn::LayerSpec::dense(64), nn::LayerSpec::relu(),
                                   nn::LayerSpec::dense(10)},
                                  {1, 28, 28}, 10));
  for (auto& p : net.all_params()) {
    for (double& v : p.weight.data()) v = 0.1 * rng.normal();
  }
  return net;
}

Tensor random_image(Rng& rng) {
  Tensor x({1, 28, 28});
  for (double& v : x.data()) v = rng.uniform();
  return x;
}

void BM_ConvForward(benchmark::State& state) {
  Rng rng(1);
  const auto c = static_cast<std::size_t>(state.range(0));
  const nn::LayerSpec layer = nn::LayerSpec::conv2d(16, 3, c);
  nn::Parameters p{Tensor(layer.weight_shape(), 0.1), Tensor(layer.bias_shape())};
  Tensor x({c, 32, 32});
  for (double& v : x.data()) v = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(nn::affine_forward(layer, p, x));
}
BENCHMARK(BM_ConvForward)->Arg(1)->Arg(3)->Arg(16);

void BM_MnistForward(benchmark::State& state) {
  Rng rng(2);
  const nn::Network net = mnist_net(rng);
  const Tensor x = random_image(rng);
  for (auto _ : state) benchmark::DoNotOptimize(nn::forward(net, x));
}
BENCHMARK(BM_MnistForward);

void BM_MnistBackward(benchmark::State& state) {
  Rng rng(3);
  const nn::Network net = mnist_net(rng);
  const Tensor x = random_image(rng);
  for (auto _ : state) benchmark::DoNotOptimize(nn::backward(net, x, 4));
}
BENCHMARK(BM_MnistBackward);

void BM_Jacobi(benchmark::State& state) {
  Rng rng(4);
  const auto d = static_cast<std::size_t>(state.range(0));
  const Matrix b = random_matrix(d, d, rng);
  const Matrix s = matmul_tn(b, b);
  for (auto _ : state) benchmark::DoNotOptimize(numerics::sym_eigendecomposition(s));
}
BENCHMARK(BM_Jacobi)->Arg(9)->Arg(27)->Arg(64)->Arg(128);

void BM_ZcaWhiten(benchmark::State& state) {
  Rng rng(5);
  const Matrix x = random_matrix(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)), rng);
  for (auto _ : state) benchmark::DoNotOptimize(numerics::zca_whiten(x, 1e-5));
}
BENCHMARK(BM_ZcaWhiten)->Args({200, 27})->Args({64, 1352});

void BM_DataStatsLayer(benchmark::State& state) {
  Rng rng(6);
  const auto d = static_cast<std::size_t>(state.range(0));
  const Matrix crops = random_matrix(2560, d, rng);
  for (auto _ : state) benchmark::DoNotOptimize(init::data_stats_init_layer(crops, 16, d, 1e-5, rng));
}
BENCHMARK(BM_DataStatsLayer)->Arg(9)->Arg(27)->Arg(75);

}  // namespace

BENCHMARK_MAIN();
