#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fmri_s4/s4_kernel.hpp"
#include "fmri_s4/ssm_core.hpp"

using namespace fmri_s4;

static s4::DPLRParams<double> hippo_channel(std::size_t state_dim) {
  auto layer = s4::init_s4_params<double>(1, state_dim, 1e-3, 1e-1, 7);
  return layer.channels[0];
}

static void KernelNaive(benchmark::State& state) {
  const auto params = hippo_channel(static_cast<std::size_t>(state.range(0)));
  const auto length = static_cast<std::size_t>(state.range(1));
  for (auto _ : state) {
    auto k = s4::dplr_kernel_naive(params, length);
    benchmark::DoNotOptimize(k.values.data());
  }
  state.SetComplexityN(state.range(1));
}
BENCHMARK(KernelNaive)->ArgsProduct({{16, 64}, {128, 512, 1024}})->Unit(benchmark::kMicrosecond);

template <typename Real>
static void KernelFast(benchmark::State& state) {
  const auto params = hippo_channel(static_cast<std::size_t>(state.range(0))).cast<Real>();
  const auto length = static_cast<std::size_t>(state.range(1));
  for (auto _ : state) {
    s4::FastKernel<Real> k(params, length);
    benchmark::DoNotOptimize(k.values().data());
  }
  state.SetComplexityN(state.range(1));
}
BENCHMARK(KernelFast<float>)->ArgsProduct({{16, 64}, {128, 512, 1024}})->Unit(benchmark::kMicrosecond);
BENCHMARK(KernelFast<double>)->ArgsProduct({{16, 64}, {128, 512, 1024}})->Unit(benchmark::kMicrosecond);

static void KernelFastBackward(benchmark::State& state) {
  const auto params = hippo_channel(static_cast<std::size_t>(state.range(0))).cast<float>();
  const auto length = static_cast<std::size_t>(state.range(1));
  const s4::FastKernel<float> k(params, length);
  const std::vector<float> grad(length, 1.0f);
  for (auto _ : state) {
    auto g = k.backward(grad);
    benchmark::DoNotOptimize(g.lambda.data());
  }
}
BENCHMARK(KernelFastBackward)->ArgsProduct({{16, 64}, {512}})->Unit(benchmark::kMicrosecond);

static void ScanRecurrence(benchmark::State& state) {
  auto sys = ssm::ContinuousSSM<double>{};
  const auto length = static_cast<std::size_t>(state.range(0));
  const std::size_t m = 16;
  sys.a = s4::hippo_legs(m);
  sys.b.assign(m, 1.0);
  sys.c.assign(m, 1.0 / m);
  const auto disc = ssm::discretize_bilinear(sys, 1e-2);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  std::vector<double> u(length);
  for (auto& v : u) v = normal(rng);
  for (auto _ : state) {
    auto y = ssm::scan(disc, u);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(ScanRecurrence)->RangeMultiplier(4)->Range(64, 4096)->Complexity(benchmark::oN);

template <typename Real>
static void CausalConvolveFft(benchmark::State& state) {
  const auto length = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  std::vector<Real> k(length), u(length);
  for (auto& v : k) v = static_cast<Real>(normal(rng));
  for (auto& v : u) v = static_cast<Real>(normal(rng));
  for (auto _ : state) {
    auto y = ssm::causal_convolve<Real>(k, u, Real{1});
    benchmark::DoNotOptimize(y.data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(CausalConvolveFft<float>)->RangeMultiplier(4)->Range(64, 4096)->Complexity(benchmark::oNLogN);
BENCHMARK(CausalConvolveFft<double>)->RangeMultiplier(4)->Range(64, 4096)->Complexity(benchmark::oNLogN);
