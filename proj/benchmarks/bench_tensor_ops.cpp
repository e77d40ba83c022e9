#include <benchmark/benchmark.h>

#include "coseg/attention.hpp"
#include "coseg/ops.hpp"

using namespace coseg;

namespace {

Tensor random_input(Shape shape, std::uint64_t seed, bool grad = false) {
  Pcg32 rng(seed);
  auto t = Tensor::zeros(std::move(shape), grad);
  for (float& v : t.values_mut()) v = rng.next_float();
  return t;
}

// Encoder/decoder stage geometries of the 64px backbone.
void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({3, 16, 64, 2});    // enc1
  b->Args({16, 32, 32, 2});   // enc2
  b->Args({32, 64, 16, 2});   // enc3
  b->Args({128, 64, 8, 1});   // dec2 (post-concat)
  b->Args({80, 32, 32, 1});   // dec4
  b->Args({32, 16, 64, 1});   // dec5
}

void BM_Conv2dForward(benchmark::State& state) {
  int ic = static_cast<int>(state.range(0));
  int oc = static_cast<int>(state.range(1));
  int res = static_cast<int>(state.range(2));
  int stride = static_cast<int>(state.range(3));
  Pcg32 rng(1);
  auto x = random_input({ic, res, res}, 2);
  auto k = glorot_uniform<float>({oc, ic, 3, 3}, ic * 9, oc * 9, rng);
  auto b = Tensor::zeros({oc});
  for (auto _ : state) {
    auto y = conv2d(x, k, b, stride, 1);
    benchmark::DoNotOptimize(y.values().data());
  }
  int out_res = (res + 2 - 3) / stride + 1;
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(oc) * ic * 9 * out_res *
                          out_res);
}
BENCHMARK(BM_Conv2dForward)->Apply(conv_args);

void BM_Conv2dBackward(benchmark::State& state) {
  int ic = static_cast<int>(state.range(0));
  int oc = static_cast<int>(state.range(1));
  int res = static_cast<int>(state.range(2));
  int stride = static_cast<int>(state.range(3));
  Pcg32 rng(1);
  auto x = random_input({ic, res, res}, 2, true);
  auto k = glorot_uniform<float>({oc, ic, 3, 3}, ic * 9, oc * 9, rng);
  auto b = Tensor::zeros({oc}, true);
  for (auto _ : state) {
    x.zero_grad();
    k.zero_grad();
    b.zero_grad();
    auto loss = sum(conv2d(x, k, b, stride, 1));
    backward(loss);
    benchmark::DoNotOptimize(k.grad().data());
  }
}
BENCHMARK(BM_Conv2dBackward)->Apply(conv_args);

void BM_UpsampleNearest2x(benchmark::State& state) {
  auto x = random_input({64, 16, 16}, 3);
  for (auto _ : state) {
    auto y = upsample_nearest2x(x);
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_UpsampleNearest2x);

void BM_ChannelAttention(benchmark::State& state) {
  Pcg32 rng(4);
  auto p = ChamParams::create(32, 4, rng);
  auto z = random_input({32, 2, 2}, 5);
  for (auto _ : state) {
    auto y = cham_apply(z, p);
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_ChannelAttention);

void BM_SpatialAttention(benchmark::State& state) {
  Pcg32 rng(6);
  auto p = SpamParams::create(7, rng);
  auto f = random_input({16, 32, 32}, 7);
  for (auto _ : state) {
    auto y = spam_apply(f, p);
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_SpatialAttention);

void BM_BceLoss(benchmark::State& state) {
  auto p = random_input({1, 64, 64}, 8);
  auto y = Tensor::zeros({1, 64, 64});
  for (std::size_t i = 0; i < y.values().size(); ++i) y.values_mut()[i] = (i % 5 == 0) ? 1.f : 0.f;
  for (float& v : p.values_mut()) v = 0.5f * v + 0.25f;
  for (auto _ : state) {
    auto l = bce_loss(p, y);
    benchmark::DoNotOptimize(l.item());
  }
}
BENCHMARK(BM_BceLoss);

}  // namespace

BENCHMARK_MAIN();
