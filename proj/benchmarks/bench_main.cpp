#include <cmath>
#include <random>

#include <benchmark/benchmark.h>

#include "avcount/audio.hpp"
#include "avcount/nn/layers.hpp"
#include "avcount/pipeline.hpp"

using namespace avcount;

namespace {

Tensor random_input(Tensor::Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
  return t;
}

void BM_Conv3dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  nn::Conv3d conv({c, c, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, true});
  std::mt19937_64 rng(1);
  conv.reset_parameters(rng);
  const Tensor x = random_input({2, c, 16, 16, 16}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x, nn::Mode::eval));
}
BENCHMARK(BM_Conv3dForward)->Arg(4)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_Conv3dBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  nn::Conv3d conv({c, c, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, true});
  std::mt19937_64 rng(1);
  conv.reset_parameters(rng);
  const Tensor x = random_input({2, c, 16, 16, 16}, 2);
  const Tensor y = conv.forward(x, nn::Mode::train);
  const Tensor g = random_input(y.shape(), 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv.backward(g));
}
BENCHMARK(BM_Conv3dBackward)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_StftSpectrogram(benchmark::State& state) {
  AudioWaveform w;
  w.sample_rate = 16000;
  w.samples.resize(static_cast<std::size_t>(state.range(0)) * 16000);
  for (std::size_t i = 0; i < w.samples.size(); ++i) w.samples[i] = std::sin(0.05 * static_cast<double>(i));
  const SpectrogramConfig config;
  for (auto _ : state) benchmark::DoNotOptimize(stft_spectrogram(w, config));
}
BENCHMARK(BM_StftSpectrogram)->Arg(2)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_SightClipForwardDesk(benchmark::State& state) {
  const RunConfig config = desk_config();
  std::mt19937_64 rng(4);
  Models models = build_models(config, rng);
  const auto& clip = config.sight.clip;
  const Tensor x = random_input({1, 3, clip.clip_len, clip.resolution, clip.resolution}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(models.sight->stream().forward(x, nn::Mode::eval));
}
BENCHMARK(BM_SightClipForwardDesk)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
