#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fmri_s4/model.hpp"

using namespace fmri_s4;

namespace {

nn::ModelConfig bench_config(std::size_t width) {
  nn::ModelConfig c;
  c.n_rois = 16;
  c.d_model = width;
  c.d_state = width;
  return c;
}

nn::Tensor3<float> random_input(std::size_t batch, std::size_t channels, std::size_t time) {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> normal;
  nn::Tensor3<float> x(batch, channels, time);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t t = 0; t < time; ++t) x(b, c, t) = normal(rng);
  return x;
}

}  // namespace

// Args: d_model (= d_state), sequence length. Batch of 8.
static void ModelForward(benchmark::State& state) {
  const auto config = bench_config(static_cast<std::size_t>(state.range(0)));
  const auto time = static_cast<std::size_t>(state.range(1));
  const nn::Model<float> model(config, 1);
  const auto x = random_input(8, config.n_rois, time);
  const auto mask = nn::Mask::from_lengths(std::vector<std::size_t>(8, time), time);
  for (auto _ : state) {
    auto logits = model.forward(x, mask, nn::Mode::eval);
    benchmark::DoNotOptimize(logits.values().data());
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(ModelForward)->ArgsProduct({{32, 128}, {100, 400}})->Unit(benchmark::kMillisecond);

static void ModelForwardBackward(benchmark::State& state) {
  const auto config = bench_config(static_cast<std::size_t>(state.range(0)));
  const auto time = static_cast<std::size_t>(state.range(1));
  nn::Model<float> model(config, 1);
  const auto x = random_input(8, config.n_rois, time);
  const auto mask = nn::Mask::from_lengths(std::vector<std::size_t>(8, time), time);
  DenseMatrix<float> grad(8, config.n_classes);
  for (auto& v : grad.values()) v = 0.125f;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    nn::ModelCache<float> cache;
    model.zero_grad();
    auto logits = model.forward(x, mask, nn::Mode::train, ++seed, &cache);
    model.backward(cache, grad);
    benchmark::DoNotOptimize(logits.values().data());
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(ModelForwardBackward)->ArgsProduct({{32, 128}, {100, 400}})->Unit(benchmark::kMillisecond);
