// Serial reference vs OpenMP kernels.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mmsam/kernels/kernels.hpp"
#include "mmsam/kernels/msda.hpp"

namespace k = mmsam::kernels;

namespace {

std::vector<double> filled(size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const int64_t n = state.range(0);
  const auto a = filled(n * n, 1), b = filled(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::gemm_nt(n, n, n, a.data(), b.data(), c.data(), false);
    else
      k::serial::gemm_nt(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}

template <bool Parallel>
void BM_Conv3x3(benchmark::State& state) {
  const int64_t s = state.range(0), ch = 32;
  const auto g = k::ConvGeom::make(2, s, s, ch, ch, 3, 1, 1, 1);
  const auto x = filled(2 * s * s * ch, 3), w = filled(9 * ch * ch, 4), bias = filled(ch, 5);
  std::vector<double> y(2 * s * s * ch);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::conv2d_forward(g, x.data(), w.data(), bias.data(), y.data());
    else
      k::serial::conv2d_forward(g, x.data(), w.data(), bias.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_Attention(benchmark::State& state) {
  k::AttnGeom g;
  g.batch = 2, g.heads = 4, g.head_dim = 16;
  g.q_len = g.kv_len = state.range(0);
  g.scale = 0.25;
  const size_t n = static_cast<size_t>(g.batch * g.q_len * g.width());
  const auto q = filled(n, 6), kk = filled(n, 7), v = filled(n, 8);
  std::vector<double> out(n), probs(static_cast<size_t>(g.batch * g.heads * g.q_len * g.kv_len));
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::attention_forward(g, q.data(), kk.data(), v.data(), nullptr, out.data(), probs.data());
    else
      k::serial::attention_forward(g, q.data(), kk.data(), v.data(), nullptr, out.data(), probs.data());
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_Msda(benchmark::State& state) {
  k::MsdaGeom g;
  g.batch = 2, g.heads = 4, g.head_dim = 16, g.points = 4;
  g.level_h = {16, 8, 4}, g.level_w = {16, 8, 4}, g.level_start = {0, 256, 320};
  g.kv_len = 336;
  g.q_len = state.range(0);
  const auto value = filled(static_cast<size_t>(g.batch * g.kv_len * g.heads * g.head_dim), 9);
  auto loc = filled(static_cast<size_t>(g.batch * g.q_len * g.heads * 3 * g.points * 2), 10);
  for (double& l : loc) l = 0.5 + 0.5 * l;
  const auto w = filled(static_cast<size_t>(g.batch * g.q_len * g.heads * 3 * g.points), 11);
  std::vector<double> out(static_cast<size_t>(g.batch * g.q_len * g.heads * g.head_dim));
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::msda_forward<double>(g, value.data(), loc.data(), w.data(), out.data());
    else
      k::serial::msda_forward<double>(g, value.data(), loc.data(), w.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(128)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(128)->Arg(256);
BENCHMARK(BM_Conv3x3<false>)->Name("conv3x3/serial")->Arg(32)->Arg(64);
BENCHMARK(BM_Conv3x3<true>)->Name("conv3x3/parallel")->Arg(32)->Arg(64);
BENCHMARK(BM_Attention<false>)->Name("attention/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Attention<true>)->Name("attention/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_Msda<false>)->Name("msda/serial")->Arg(336)->Arg(1344);
BENCHMARK(BM_Msda<true>)->Name("msda/parallel")->Arg(336)->Arg(1344);

BENCHMARK_MAIN();
