#include <benchmark/benchmark.h>

#include "coseg/model.hpp"

using namespace coseg;

namespace {

std::vector<Tensor> random_images(int count, int size, std::uint64_t seed) {
  Pcg32 rng(seed);
  std::vector<Tensor> images;
  for (int i = 0; i < count; ++i) {
    auto t = Tensor::zeros({3, size, size});
    for (float& v : t.values_mut()) v = rng.next_float();
    images.push_back(std::move(t));
  }
  return images;
}

void BM_Encode(benchmark::State& state) {
  DviceModel model(BackboneConfig{}, 1);
  auto images = random_images(1, 64, 2);
  for (auto _ : state) {
    auto [dist, skips] = model.encode(images[0]);
    benchmark::DoNotOptimize(dist.mean.values().data());
  }
}
BENCHMARK(BM_Encode);

void BM_Prototype8(benchmark::State& state) {
  DviceModel model(BackboneConfig{}, 1);
  auto guide = random_images(8, 64, 3);
  for (auto _ : state) {
    auto proto = model.compute_prototype(guide);
    benchmark::DoNotOptimize(proto.attended_mean.values().data());
  }
}
BENCHMARK(BM_Prototype8);

void BM_SegmentEpisodeEval(benchmark::State& state) {
  DviceModel model(BackboneConfig{}, 1);
  auto guide = random_images(8, 64, 4);
  auto coseg = random_images(4, 64, 5);
  NoiseFn<float> no_noise = [](const Shape&) -> Tensor {
    throw ValueError("eval requested noise");
  };
  for (auto _ : state) {
    auto masks = model.segment_episode(guide, coseg, RunMode::kEval, no_noise);
    benchmark::DoNotOptimize(masks[0].values().data());
  }
}
BENCHMARK(BM_SegmentEpisodeEval);

void BM_TrainIteration(benchmark::State& state) {
  DviceModel model(BackboneConfig{}, 1);
  auto guide = random_images(8, 64, 6);
  auto coseg = random_images(4, 64, 7);
  Pcg32 noise_rng(8);
  auto noise = gaussian_noise<float>(noise_rng);
  std::vector<Tensor> targets;
  Pcg32 trng(9);
  for (int i = 0; i < 4; ++i) {
    auto t = Tensor::zeros({1, 64, 64});
    for (float& v : t.values_mut()) v = trng.next_float() < 0.2f ? 1.0f : 0.0f;
    targets.push_back(std::move(t));
  }
  for (auto _ : state) {
    auto out = model.forward_episode(guide, coseg, RunMode::kTrain, noise);
    auto loss = dvice_loss<float>(out.masks, targets, out.latents, out.prototype, 1.0f, 1.0f);
    model.params().zero_grads();
    backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_TrainIteration);

}  // namespace

BENCHMARK_MAIN();
