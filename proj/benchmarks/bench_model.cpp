#include <benchmark/benchmark.h>

#include "dstu/attention.hpp"
#include "dstu/dataset.hpp"
#include "dstu/losses.hpp"
#include "dstu/model.hpp"
#include "dstu/ops.hpp"

namespace {

using namespace dstu;

Tensor filled(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

// Args: side, window, channels.
void BM_WindowAttention(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto window = static_cast<std::size_t>(state.range(1));
  const auto dim = static_cast<std::size_t>(state.range(2));
  ParamStore store(1);
  const WindowAttnParams p = make_window_attn(store, "a", dim, 2, window);
  const Tensor x = filled({side, side, dim}, 2);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(window_attention(x, p));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(side * side));
}
BENCHMARK(BM_WindowAttention)->Args({16, 4, 16})->Args({32, 4, 16})->Args({24, 6, 32});

void BM_ShiftedWindowAttention(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto window = static_cast<std::size_t>(state.range(1));
  ParamStore store(1);
  const WindowAttnParams p = make_window_attn(store, "a", 16, 2, window);
  const Tensor x = filled({side, side, 16}, 3);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(shifted_window_attention(x, p, window / 2));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(side * side));
}
BENCHMARK(BM_ShiftedWindowAttention)->Args({16, 4})->Args({32, 4});

void BM_ModelForward(benchmark::State& state) {
  ModelConfig c;
  c.mode = static_cast<Mode>(state.range(0));
  const Model model(c);
  const Tensor image = synthetic_sample(64, 0, 0).image;
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(image));
  state.SetLabel(to_string(c.mode));
}
BENCHMARK(BM_ModelForward)
    ->Arg(static_cast<int>(Mode::Base))
    ->Arg(static_cast<int>(Mode::SwinDecoder))
    ->Arg(static_cast<int>(Mode::DualSwin))
    ->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  Model model(ModelConfig{});
  const Sample s = synthetic_sample(64, 0, 0);
  for (auto _ : state) {
    model.store().zero_grad();
    Tensor loss = total_loss(model.forward(s.image), s.mask, LossWeights{});
    backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_StructureLoss(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const Sample s = synthetic_sample(side, 0, 0);
  const Tensor logits = filled({side, side, 1}, 4);
  for (auto _ : state) {
    const Tensor w = pixel_weight_map(s.mask);
    benchmark::DoNotOptimize(structure_loss(logits, s.mask, w).item());
  }
}
BENCHMARK(BM_StructureLoss)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
